#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before every log.
inline constexpr double kProbEpsilon = 1e-7;

inline double clamp_prob(double p) {
  return p < kProbEpsilon ? kProbEpsilon : (p > 1.0 - kProbEpsilon ? 1.0 - kProbEpsilon : p);
}

// Per-voxel entropy in nats, shape (B, H, W, D).
struct EntropyMap {
  std::size_t batch = 0;
  Dims3 spatial;
  std::vector<double> values;

  [[nodiscard]] double at(std::size_t b, std::size_t i, std::size_t j, std::size_t k) const {
    return values[b * spatial.count() + spatial.index(i, j, k)];
  }
};

// Entropy of one voxel whose class probabilities sit `stride` apart in `p`.
double voxel_entropy(const double* p, std::size_t classes, std::size_t stride);

EntropyMap entropy(const ProbabilityField& p);

// Confidence-adjusted, temperature-scaled renormalisation:
//   p_h,c ∝ exp(ln p_c / T_g + (1 - max_c p_c))
// The (1 - max p) offset is kept even though it cancels per voxel.
ProbabilityField gambling_softmax(const ProbabilityField& p, double temperature);

enum class Axis { H = 0, W = 1, D = 2 };

Axis parse_axis(std::string_view name);
char axis_name(Axis axis);

// One CSV per slice along `axis` (0 = H, 1 = W, 2 = D), named
// slice_<axis>_<index>.csv; rows run over the first remaining axis.
// Batches larger than one go to per-item subdirectories b<index>/.
// Returns the written paths in slice order.
std::vector<std::filesystem::path> export_entropy_slices(const EntropyMap& h, int axis,
                                                         const std::filesystem::path& dir);

}  // namespace dycon
