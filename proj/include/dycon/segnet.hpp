#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

struct NetConfig {
  int features = 8;     // F, width of the 3x3x3 trunk
  int embed_dim = 16;   // E, projection-head output channels
  int classes = 2;      // C

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

// conv1: 3x3x3, 1 -> F, ReLU
// conv2: 1x1x1, F -> C (logits)
// projection head: two parallel 3x3x3 convolutions F -> E with dilation 1
// and 2, summed, plus one shared bias
struct ParamSet {
  static constexpr std::size_t kTensorCount = 7;

  NetConfig config;
  std::vector<double> conv1_w;  // F x 27
  std::vector<double> conv1_b;  // F
  std::vector<double> conv2_w;  // C x F
  std::vector<double> conv2_b;  // C
  std::vector<double> proj1_w;  // E x F x 27, dilation 1
  std::vector<double> proj2_w;  // E x F x 27, dilation 2
  std::vector<double> proj_b;   // E

  static ParamSet zeros(const NetConfig& config);
  // He-normal weights, zero biases.
  static ParamSet initialize(const NetConfig& config, std::uint64_t seed);

  std::array<std::vector<double>*, kTensorCount> tensors();
  std::array<const std::vector<double>*, kTensorCount> tensors() const;
  static const std::array<const char*, kTensorCount>& tensor_names();
  // Tensor shapes as (out, in, kh, kw, kd).
  std::array<Shape, kTensorCount> tensor_shapes() const;

  [[nodiscard]] std::size_t size() const;
  bool operator==(const ParamSet&) const = default;
};

struct ForwardCache {
  std::size_t batch = 0;
  Dims3 spatial;
  int classes = 0;
  int features = 0;
  int embed_dim = 0;
  std::vector<double> input;   // B x 1 x n
  std::vector<double> hidden;  // B x F x n, post-ReLU
  std::vector<double> logits;  // B x C x n
  std::vector<double> probs;   // B x C x n
  std::vector<double> z_grid;  // B x E x n, empty without the projection head

  [[nodiscard]] bool empty() const { return input.empty(); }
  [[nodiscard]] Shape prob_shape() const {
    return {batch, static_cast<std::size_t>(classes), spatial};
  }
  ProbabilityField probabilities() const;
};

// Same-padded (zero) convolutions; spatial dims must each be >= 3.
ForwardCache forward(const ParamSet& params, std::span<const double> input, std::size_t batch,
                     Dims3 spatial, bool with_projection = true);
ForwardCache forward(const ParamSet& params, const VolumeBatch& x, bool with_projection = true);

// Reverse mode of the fixed graph. Either upstream span may be empty (treated
// as zero); grad_z requires a cache that ran the projection head.
ParamSet backward(const ParamSet& params, const ForwardCache& cache,
                  std::span<const double> grad_probs, std::span<const double> grad_z);

// Per-voxel argmax of the class probabilities.
LabelField predict_labels(const ForwardCache& cache);

struct OptimState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  ParamSet velocity;

  static OptimState for_params(const ParamSet& params, double lr, double momentum,
                               double weight_decay);
};

// v <- m v + g + wd θ ; θ <- θ - lr v
void sgd_step(ParamSet& params, const ParamSet& grads, OptimState& opt);

// θ_t <- α θ_t + (1 - α) θ_s
void ema_update(ParamSet& teacher, const ParamSet& student, double alpha);

struct CheckpointMeta {
  std::string arch = "aspp-lite-v1";
  int epoch = 0;
  std::uint64_t rng_seed = 0;
};

// Tensors in the float32 volume format plus manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params,
                     const CheckpointMeta& meta);
ParamSet load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

}  // namespace dycon
