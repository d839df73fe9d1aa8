#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

enum class LesionSize { small, medium, large };
enum class Scatter { scattered, non_scattered };

std::string to_string(LesionSize s);
std::string to_string(Scatter s);
LesionSize parse_lesion_size(std::string_view name);
Scatter parse_scatter(std::string_view name);

struct LesionSpec {
  int count = 1;
  double radius_min = 2.0;  // voxels, per ellipsoid semi-axis
  double radius_max = 4.0;
  double contrast = 2.0;    // lesion brightness in units of background σ
  LesionSize category = LesionSize::medium;
  Scatter scatter = Scatter::non_scattered;

  void validate() const;
};

// Category/scatter presets tuned for 32^3 volumes; radii scale with the
// smallest volume side. The seed picks the count.
LesionSpec preset_spec(LesionSize category, Scatter scatter, std::uint64_t seed,
                       double contrast = 2.0, Dims3 size = {32, 32, 32});

struct SyntheticVolume {
  VolumeBatch image;  // (1, 1, H, W, D)
  LabelField mask;    // (1, H, W, D)
};

// Smooth seeded noise plus ellipsoidal lesions with soft edges. Bitwise
// deterministic per (seed, size, spec).
SyntheticVolume gen_volume(std::uint64_t seed, Dims3 size, const LesionSpec& spec);

// --- augmentation ------------------------------------------------------------

// Applied in order: flips, quarter turns in the H-W plane, crop.
struct AugmentParams {
  Dims3 source;
  bool flip[3] = {false, false, false};
  int quarter_turns = 0;  // only when H == W
  Dims3 crop;
  std::size_t offset[3] = {0, 0, 0};
};

AugmentParams identity_augment(Dims3 volume);
AugmentParams sample_augment(std::uint64_t seed, Dims3 volume, Dims3 crop);

VolumeBatch apply_augment(const AugmentParams& a, const VolumeBatch& x);
LabelField apply_augment(const AugmentParams& a, const LabelField& y);

std::pair<VolumeBatch, LabelField> augment(const VolumeBatch& x, const LabelField& y,
                                           std::uint64_t seed, Dims3 crop);

// --- datasets ------------------------------------------------------------------

inline constexpr const char* kGeneratorVersion = "synthvol-1";

struct VolumeEntry {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::string mask;
  bool labeled = false;
  std::string split = "train";  // train | val
  std::uint64_t seed = 0;
  LesionSize category = LesionSize::medium;
  Scatter scatter = Scatter::non_scattered;
  double foreground_fraction = 0.0;
};

struct DatasetManifest {
  std::vector<VolumeEntry> volumes;
  double labeled_ratio = 0.1;
  double val_ratio = 0.2;
  std::uint64_t seed = 0;
  Dims3 size{32, 32, 32};
  std::string generator_version = kGeneratorVersion;
  std::filesystem::path root;  // directory holding manifest.json; not serialised

  void validate() const;
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

struct DatasetConfig {
  int volumes = 40;
  Dims3 size{32, 32, 32};
  double labeled_ratio = 0.1;
  double val_ratio = 0.2;
  std::uint64_t seed = 1;
  double contrast = 2.0;
  std::optional<LesionSize> category;  // restrict the size grid
  std::optional<Scatter> scatter;      // restrict the scatter grid
  std::filesystem::path output_dir;
  bool overwrite = false;
};

// Number of labeled training volumes for a split.
std::size_t labeled_count(std::size_t train_volumes, double labeled_ratio);

DatasetManifest build_dataset(const DatasetConfig& config);

}  // namespace dycon
