#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

// Masks are single volumes; any nonzero voxel is foreground.

struct OverlapScores {
  double dice = 0.0;
  double iou = 0.0;
};

// Both masks empty -> (1, 1).
OverlapScores dice_iou(std::span<const std::int32_t> a, std::span<const std::int32_t> b);

// Flat indices of foreground voxels with a background (or out-of-volume)
// 6-neighbour, ascending.
std::vector<std::size_t> surface_voxels(std::span<const std::int32_t> mask, Dims3 spatial);

// Exact squared Euclidean distance (voxel units) from every voxel to the
// nearest marked voxel; -1 everywhere when nothing is marked.
std::vector<std::int64_t> squared_distance_transform(std::span<const std::uint8_t> marked,
                                                     Dims3 spatial);

struct SurfaceScores {
  double hd95 = 0.0;
  double asd = 0.0;
  bool collapsed = false;  // an input was empty; both values hold the volume diagonal
};

// Pools both directed surface-to-surface distance sets: hd95 is their 95th
// percentile (linear interpolation), asd their mean.
SurfaceScores surface_distances(std::span<const std::int32_t> a, std::span<const std::int32_t> b,
                                Dims3 spatial);

// Linear-interpolated percentile of an ascending-sorted sample, q in [0, 1].
double sorted_percentile(std::span<const double> sorted, double q);

struct VolumeMetrics {
  std::string volume_id;
  std::string category;
  std::string scatter;
  double dice = 0.0;
  double iou = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;
  bool collapsed = false;
};

VolumeMetrics evaluate_masks(std::span<const std::int32_t> prediction,
                             std::span<const std::int32_t> truth, Dims3 spatial);

struct MetricReport {
  std::vector<VolumeMetrics> volumes;
  VolumeMetrics mean;  // arithmetic mean over volumes

  static MetricReport from(std::vector<VolumeMetrics> volumes);
};

// Columns: volume_id, category, scatter, dice, iou, hd95, asd
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace dycon
