#include "dycon/run_config.hpp"

#include <fstream>
#include <set>

#include "dycon/error.hpp"

namespace dycon {

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (half labeled, half unlabeled)");
  if (iterations_per_epoch < 0) throw ConfigError("iterations_per_epoch must be >= 0");
  if (!(labeled_ratio >= 0.0 && labeled_ratio <= 1.0))
    throw ConfigError("labeled_ratio must lie in [0, 1]");
  if (crop.h < 3 || crop.w < 3 || crop.d < 3) throw ConfigError("crop dims must be >= 3");
  if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (top_k < 0) throw ConfigError("top_k must be >= 0");
  if (patches_per_axis < 1) throw ConfigError("patches_per_axis must be >= 1");
  if (!(gambling_temperature > 0.0)) throw ConfigError("gambling_temperature must be > 0");
  if (features < 1 || embed_dim < 1 || classes != 2)
    throw ConfigError("features and embed_dim must be >= 1; only binary segmentation is supported");
  if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema_alpha must lie in [0, 1]");
  if (!(lr > 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0))
    throw ConfigError("SGD settings out of range");
  if (!(view_noise >= 0.0)) throw ConfigError("view_noise must be >= 0");
  try {
    schedule().validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

BetaSchedule RunConfig::schedule() const {
  BetaSchedule s = beta;
  s.total_epochs = epochs;
  return s;
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"manifest", manifest.string()},
      {"output_dir", output_dir.string()},
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"iterations_per_epoch", iterations_per_epoch},
      {"labeled_ratio", labeled_ratio},
      {"crop", {crop.h, crop.w, crop.d}},
      {"eta", eta},
      {"beta",
       {{"mode", to_string(beta.mode)},
        {"beta_max", beta.beta_max},
        {"beta_min", beta.beta_min},
        {"decay", beta.decay},
        {"fixed_value", beta.fixed_value}}},
      {"entropy_mode", to_string(entropy_mode)},
      {"use_uncl", use_uncl},
      {"use_fecl", use_fecl},
      {"tau", tau},
      {"gamma", gamma},
      {"top_k", top_k},
      {"patches_per_axis", patches_per_axis},
      {"gambling_temperature", gambling_temperature},
      {"normalize_patch_entropy", normalize_patch_entropy},
      {"features", features},
      {"embed_dim", embed_dim},
      {"classes", classes},
      {"ema_alpha", ema_alpha},
      {"lr", lr},
      {"momentum", momentum},
      {"weight_decay", weight_decay},
      {"view_noise", view_noise},
      {"seed", seed},
      {"save_checkpoints", save_checkpoints},
      {"overwrite", overwrite},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "manifest", "output_dir", "epochs", "batch_size", "iterations_per_epoch", "labeled_ratio",
      "crop", "eta", "beta", "entropy_mode", "use_uncl", "use_fecl", "tau", "gamma", "top_k",
      "patches_per_axis", "gambling_temperature", "normalize_patch_entropy", "features",
      "embed_dim", "classes", "ema_alpha", "lr", "momentum", "weight_decay", "view_noise", "seed",
      "save_checkpoints", "overwrite"};
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown run config key '" + key + "'");

  RunConfig c;
  try {
    if (j.contains("manifest")) c.manifest = j["manifest"].get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
    c.labeled_ratio = j.value("labeled_ratio", c.labeled_ratio);
    if (j.contains("crop")) {
      const auto v = j["crop"].get<std::vector<std::size_t>>();
      if (v.size() != 3) throw ConfigError("crop must list three dims");
      c.crop = {v[0], v[1], v[2]};
    }
    c.eta = j.value("eta", c.eta);
    if (j.contains("beta")) {
      const auto& b = j["beta"];
      static const std::set<std::string> beta_keys = {"mode", "beta_max", "beta_min", "decay",
                                                      "fixed_value"};
      for (const auto& [key, _] : b.items())
        if (!beta_keys.count(key)) throw ConfigError("unknown beta key '" + key + "'");
      if (b.contains("mode")) c.beta.mode = parse_beta_mode(b["mode"].get<std::string>());
      c.beta.beta_max = b.value("beta_max", c.beta.beta_max);
      c.beta.beta_min = b.value("beta_min", c.beta.beta_min);
      c.beta.decay = b.value("decay", c.beta.decay);
      c.beta.fixed_value = b.value("fixed_value", c.beta.fixed_value);
    }
    if (j.contains("entropy_mode"))
      c.entropy_mode = parse_entropy_mode(j["entropy_mode"].get<std::string>());
    c.use_uncl = j.value("use_uncl", c.use_uncl);
    c.use_fecl = j.value("use_fecl", c.use_fecl);
    c.tau = j.value("tau", c.tau);
    c.gamma = j.value("gamma", c.gamma);
    c.top_k = j.value("top_k", c.top_k);
    c.patches_per_axis = j.value("patches_per_axis", c.patches_per_axis);
    c.gambling_temperature = j.value("gambling_temperature", c.gambling_temperature);
    c.normalize_patch_entropy = j.value("normalize_patch_entropy", c.normalize_patch_entropy);
    c.features = j.value("features", c.features);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.classes = j.value("classes", c.classes);
    c.ema_alpha = j.value("ema_alpha", c.ema_alpha);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.view_noise = j.value("view_noise", c.view_noise);
    c.seed = j.value("seed", c.seed);
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
    c.overwrite = j.value("overwrite", c.overwrite);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read run config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("run config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json().dump(2) << '\n';
}

}  // namespace dycon
