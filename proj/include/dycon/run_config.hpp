#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "dycon/fields.hpp"
#include "dycon/uncl.hpp"

namespace dycon {

// Complete description of one training run. Serialises to JSON and reloads
// to an identical run.
struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir;

  int epochs = 20;                 // T
  int batch_size = 4;              // half labeled, half unlabeled
  int iterations_per_epoch = 0;    // 0: ceil(unlabeled volumes / unlabeled batch)
  double labeled_ratio = 0.0;      // 0: keep the manifest's labeled flags
  Dims3 crop{24, 24, 24};

  double eta = 1.0;
  BetaSchedule beta;               // beta.total_epochs is forced to `epochs`
  EntropyMode entropy_mode = EntropyMode::dual;
  bool use_uncl = true;
  bool use_fecl = true;

  double tau = 0.6;
  double gamma = 0.5;
  int top_k = 16;
  int patches_per_axis = 16;       // k
  double gambling_temperature = 1.0;
  bool normalize_patch_entropy = true;

  int features = 8;
  int embed_dim = 16;
  int classes = 2;

  double ema_alpha = 0.99;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double view_noise = 0.1;         // σ of the per-view Gaussian perturbation

  std::uint64_t seed = 0;
  bool save_checkpoints = true;
  bool overwrite = false;

  void validate() const;
  [[nodiscard]] BetaSchedule schedule() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace dycon
