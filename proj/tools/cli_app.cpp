#include "cli_app.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "dycon/error.hpp"
#include "dycon/gradcheck.hpp"
#include "dycon/trainer.hpp"
#include "dycon/uncertainty.hpp"

namespace dycon {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_json(const fs::path& path, const json& j) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void guard_output(const fs::path& marker, bool overwrite) {
  if (fs::exists(marker) && !overwrite)
    throw IoError(marker.string() + " exists; pass --overwrite to replace it");
}

json metrics_json(const VolumeMetrics& m) {
  return {{"dice", m.dice}, {"iou", m.iou}, {"hd95", m.hd95}, {"asd", m.asd}};
}

// --- gen-data ---------------------------------------------------------------------

struct GenDataArgs {
  DatasetConfig config;
  std::size_t size = 32;
  std::string category;
  std::string scatter;
};

int gen_data(GenDataArgs& a, bool as_json) {
  a.config.size = {a.size, a.size, a.size};
  if (!a.category.empty()) a.config.category = parse_lesion_size(a.category);
  if (!a.scatter.empty()) a.config.scatter = parse_scatter(a.scatter);
  const auto manifest = build_dataset(a.config);
  json resolved = {{"volumes", a.config.volumes},
                   {"size", a.size},
                   {"labeled_ratio", a.config.labeled_ratio},
                   {"val_ratio", a.config.val_ratio},
                   {"seed", a.config.seed},
                   {"contrast", a.config.contrast},
                   {"category", a.category},
                   {"scatter", a.scatter},
                   {"output_dir", a.config.output_dir.string()}};
  write_json(a.config.output_dir / "resolved_config.json", resolved);
  std::size_t labeled = 0, val = 0;
  for (const auto& v : manifest.volumes) {
    labeled += v.labeled ? 1 : 0;
    val += v.split == "val" ? 1 : 0;
  }
  const json summary = {{"manifest", (a.config.output_dir / "manifest.json").string()},
                        {"volumes", manifest.volumes.size()},
                        {"labeled", labeled},
                        {"val", val}};
  if (as_json)
    std::cout << summary.dump() << '\n';
  else
    std::cout << "wrote " << manifest.volumes.size() << " volumes (" << labeled << " labeled, "
              << val << " val) to " << a.config.output_dir.string() << '\n';
  return kExitOk;
}

// --- train -------------------------------------------------------------------------

// Flag overrides; unset optionals leave the config file's value alone.
struct TrainArgs {
  std::string config_path;
  std::optional<std::string> manifest, output_dir, entropy_mode, beta_mode;
  std::optional<int> epochs, batch_size, iterations, top_k, patches, features, embed_dim;
  std::optional<double> labeled_ratio, eta, beta_max, beta_min, beta_decay, beta_fixed, tau, gamma,
      lr, momentum, weight_decay, ema_alpha, view_noise, gambling_temperature;
  std::optional<std::size_t> crop;
  std::optional<std::uint64_t> seed;
  bool no_uncl = false, no_fecl = false, no_checkpoints = false, overwrite = false;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--config", a.config_path, "RunConfig JSON; flags below override it");
  cmd->add_option("--manifest", a.manifest, "dataset manifest.json");
  cmd->add_option("--out", a.output_dir, "output directory");
  cmd->add_option("--epochs", a.epochs);
  cmd->add_option("--batch-size", a.batch_size, "half labeled, half unlabeled");
  cmd->add_option("--iterations", a.iterations, "iterations per epoch (0 = derive)");
  cmd->add_option("--labeled-ratio", a.labeled_ratio, "relabel the train split (0 = manifest)");
  cmd->add_option("--crop", a.crop, "cubic crop edge");
  cmd->add_option("--eta", a.eta, "unsupervised loss weight");
  cmd->add_option("--beta-mode", a.beta_mode, "none | fixed | adaptive");
  cmd->add_option("--beta-max", a.beta_max);
  cmd->add_option("--beta-min", a.beta_min);
  cmd->add_option("--beta-decay", a.beta_decay, "lambda of the adaptive schedule");
  cmd->add_option("--beta-fixed", a.beta_fixed, "value for --beta-mode fixed");
  cmd->add_option("--entropy-mode", a.entropy_mode, "dual | student_only | teacher_only");
  cmd->add_flag("--no-uncl", a.no_uncl, "plain MSE consistency instead of UnCL");
  cmd->add_flag("--no-fecl", a.no_fecl, "disable the contrastive term");
  cmd->add_option("--tau", a.tau);
  cmd->add_option("--gamma", a.gamma);
  cmd->add_option("--top-k", a.top_k);
  cmd->add_option("--patches", a.patches, "patches per axis");
  cmd->add_option("--gambling-temperature", a.gambling_temperature);
  cmd->add_option("--features", a.features);
  cmd->add_option("--embed-dim", a.embed_dim);
  cmd->add_option("--lr", a.lr);
  cmd->add_option("--momentum", a.momentum);
  cmd->add_option("--weight-decay", a.weight_decay);
  cmd->add_option("--ema-alpha", a.ema_alpha);
  cmd->add_option("--view-noise", a.view_noise);
  cmd->add_option("--seed", a.seed);
  cmd->add_flag("--no-checkpoints", a.no_checkpoints);
  cmd->add_flag("--overwrite", a.overwrite);
}

RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig c = a.config_path.empty() ? RunConfig{} : RunConfig::load(a.config_path);
  if (a.manifest) c.manifest = *a.manifest;
  if (a.output_dir) c.output_dir = *a.output_dir;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.iterations) c.iterations_per_epoch = *a.iterations;
  if (a.labeled_ratio) c.labeled_ratio = *a.labeled_ratio;
  if (a.crop) c.crop = {*a.crop, *a.crop, *a.crop};
  if (a.eta) c.eta = *a.eta;
  if (a.beta_mode) c.beta.mode = parse_beta_mode(*a.beta_mode);
  if (a.beta_max) c.beta.beta_max = *a.beta_max;
  if (a.beta_min) c.beta.beta_min = *a.beta_min;
  if (a.beta_decay) c.beta.decay = *a.beta_decay;
  if (a.beta_fixed) c.beta.fixed_value = *a.beta_fixed;
  if (a.entropy_mode) c.entropy_mode = parse_entropy_mode(*a.entropy_mode);
  if (a.no_uncl) c.use_uncl = false;
  if (a.no_fecl) c.use_fecl = false;
  if (a.tau) c.tau = *a.tau;
  if (a.gamma) c.gamma = *a.gamma;
  if (a.top_k) c.top_k = *a.top_k;
  if (a.patches) c.patches_per_axis = *a.patches;
  if (a.gambling_temperature) c.gambling_temperature = *a.gambling_temperature;
  if (a.features) c.features = *a.features;
  if (a.embed_dim) c.embed_dim = *a.embed_dim;
  if (a.lr) c.lr = *a.lr;
  if (a.momentum) c.momentum = *a.momentum;
  if (a.weight_decay) c.weight_decay = *a.weight_decay;
  if (a.ema_alpha) c.ema_alpha = *a.ema_alpha;
  if (a.view_noise) c.view_noise = *a.view_noise;
  if (a.seed) c.seed = *a.seed;
  if (a.no_checkpoints) c.save_checkpoints = false;
  if (a.overwrite) c.overwrite = true;
  c.validate();
  return c;
}

int train_cmd(const TrainArgs& a, bool as_json) {
  const RunConfig config = resolve_train_config(a);
  const auto r = train(config);
  const bool ok = r.status == RunStatus::ok;
  const json summary = {{"status", ok ? "ok" : "diverged"},
                        {"message", r.message},
                        {"epochs", r.epochs.size()},
                        {"best_dice", r.best_dice},
                        {"best_epoch", r.best_epoch},
                        {"final", metrics_json(r.final_metrics.mean)},
                        {"output_dir", config.output_dir.string()}};
  if (as_json) {
    std::cout << summary.dump() << '\n';
  } else if (ok) {
    std::printf("trained %zu epochs: final val dice %.4f, best %.4f at epoch %d\n",
                r.epochs.size(), r.final_metrics.mean.dice, r.best_dice, r.best_epoch);
  } else {
    std::fprintf(stderr, "diverged: %s\n", r.message.c_str());
  }
  return ok ? kExitOk : kExitRuntime;
}

// --- ablate ------------------------------------------------------------------------

struct AblateArgs {
  std::string grid_path;
  std::optional<std::string> output_dir;
  bool overwrite = false;
};

int ablate_cmd(const AblateArgs& a, bool as_json) {
  std::ifstream is(a.grid_path);
  if (!is) throw IoError("cannot open " + a.grid_path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(a.grid_path + ": " + e.what());
  }
  if (j.is_object() && j.contains("base") && j["base"].is_object()) {
    if (a.output_dir) j["base"]["output_dir"] = *a.output_dir;
    if (a.overwrite) j["base"]["overwrite"] = true;
  }
  const auto grid = AblationGrid::from_json(j);
  if (grid.base.output_dir.empty()) throw ConfigError("ablation needs an output directory");
  guard_output(grid.base.output_dir / "ablation.csv", grid.base.overwrite);
  write_json(grid.base.output_dir / "resolved_grid.json", j);
  const auto result = ablate(grid);
  json summary = json::array();
  for (const auto& s : result.summary)
    summary.push_back({{"cell", s.cell},
                       {"runs", s.runs},
                       {"dice", s.mean_dice},
                       {"iou", s.mean_iou},
                       {"hd95", s.mean_hd95},
                       {"asd", s.mean_asd}});
  if (as_json) {
    std::cout << json{{"cells", summary}}.dump() << '\n';
  } else {
    for (const auto& s : result.summary)
      std::printf("%-40s dice %.4f  iou %.4f  hd95 %.3f  asd %.3f\n", s.cell.c_str(), s.mean_dice,
                  s.mean_iou, s.mean_hd95, s.mean_asd);
  }
  const bool any_diverged = std::any_of(result.rows.begin(), result.rows.end(), [](const auto& r) {
    return r.status == RunStatus::diverged;
  });
  return any_diverged ? kExitRuntime : kExitOk;
}

// --- eval ----------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, output_dir, group_by = "category", split = "val";
  bool overwrite = false;
};

int eval_cmd(const EvalArgs& a, bool as_json) {
  GroupBy group;
  if (a.group_by == "category")
    group = GroupBy::category;
  else if (a.group_by == "scatter")
    group = GroupBy::scatter;
  else
    throw ConfigError("--group-by must be category or scatter");
  const fs::path out(a.output_dir);
  guard_output(out / "report.csv", a.overwrite);
  const auto result = evaluate(a.checkpoint, a.manifest, group, a.split);
  write_json(out / "resolved_config.json", {{"checkpoint", a.checkpoint},
                                            {"manifest", a.manifest},
                                            {"group_by", a.group_by},
                                            {"split", a.split}});
  write_evaluation(result, out / "report.csv", out / "groups.csv");
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (as_json) {
    json groups = json::array();
    for (const auto& g : result.groups)
      groups.push_back({{"group", g.group},
                        {"volumes", g.volumes},
                        {"dice", g.dice},
                        {"iou", g.iou},
                        {"hd95", g.hd95},
                        {"asd", g.asd}});
    std::cout << json{{"mean", metrics_json(result.report.mean)},
                      {"groups", groups},
                      {"warnings", result.warnings}}
                     .dump()
              << '\n';
  } else {
    std::printf("%zu volumes: dice %.4f  iou %.4f  hd95 %.3f  asd %.3f\n",
                result.report.volumes.size(), result.report.mean.dice, result.report.mean.iou,
                result.report.mean.hd95, result.report.mean.asd);
    for (const auto& g : result.groups)
      std::printf("  %-14s (%zu) dice %.4f\n", g.group.c_str(), g.volumes, g.dice);
  }
  return kExitOk;
}

// --- gradcheck -----------------------------------------------------------------------

int gradcheck_cmd(std::uint64_t seed, bool as_json) {
  const auto suites = run_gradcheck(seed);
  bool ok = true;
  json rows = json::array();
  for (const auto& s : suites) {
    ok = ok && s.passed();
    rows.push_back({{"suite", s.name},
                    {"probes", s.probes},
                    {"max_relative_error", s.max_relative_error},
                    {"tolerance", s.tolerance},
                    {"passed", s.passed()}});
    if (!as_json)
      std::printf("%-12s probes %6zu  max rel err %.3e  (tol %.0e)  %s\n", s.name.c_str(),
                  s.probes, s.max_relative_error, s.tolerance, s.passed() ? "ok" : "FAIL");
  }
  if (as_json) std::cout << json{{"seed", seed}, {"suites", rows}, {"passed", ok}}.dump() << '\n';
  return ok ? kExitOk : kExitRuntime;
}

// --- export-maps ---------------------------------------------------------------------

struct ExportArgs {
  std::string checkpoint, image, output_dir, axis = "D";
  double gambling_temperature = 0.0;  // 0: plain softmax entropy
  bool overwrite = false;
};

int export_cmd(const ExportArgs& a, bool as_json) {
  const fs::path out(a.output_dir);
  if (fs::exists(out) && !fs::is_empty(out) && !a.overwrite)
    throw IoError(out.string() + " is not empty; pass --overwrite to replace it");
  const Axis axis = parse_axis(a.axis);
  const auto params = load_checkpoint(a.checkpoint);
  const auto image = read_volume_batch(a.image);
  auto probs = forward(params, image, false).probabilities();
  if (a.gambling_temperature > 0.0) probs = gambling_softmax(probs, a.gambling_temperature);
  const auto h = entropy(probs);
  if (a.overwrite && fs::exists(out)) fs::remove_all(out);
  const auto written = export_entropy_slices(h, static_cast<int>(axis), out);
  write_json(out / "resolved_config.json", {{"checkpoint", a.checkpoint},
                                            {"image", a.image},
                                            {"axis", a.axis},
                                            {"gambling_temperature", a.gambling_temperature}});
  if (as_json)
    std::cout << json{{"slices", written.size()}, {"output_dir", out.string()}}.dump() << '\n';
  else
    std::printf("wrote %zu slices to %s\n", written.size(), out.string().c_str());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"DyCON losses, synthetic lesion data and a mean-teacher trainer", "dycon"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "print a machine-readable summary");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic lesion dataset");
  gen_cmd->add_option("--out", gen.config.output_dir, "output directory")->required();
  gen_cmd->add_option("--volumes", gen.config.volumes);
  gen_cmd->add_option("--size", gen.size, "cubic volume edge");
  gen_cmd->add_option("--labeled-ratio", gen.config.labeled_ratio);
  gen_cmd->add_option("--val-ratio", gen.config.val_ratio);
  gen_cmd->add_option("--seed", gen.config.seed);
  gen_cmd->add_option("--contrast", gen.config.contrast);
  gen_cmd->add_option("--category", gen.category, "small | medium | large");
  gen_cmd->add_option("--scatter", gen.scatter, "scattered | non-scattered");
  gen_cmd->add_flag("--overwrite", gen.config.overwrite);

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "train a mean-teacher model");
  add_train_flags(train_sub, tr);

  AblateArgs ab;
  auto* ablate_sub = app.add_subcommand("ablate", "run an ablation grid over seeds");
  ablate_sub->add_option("--grid", ab.grid_path, "grid JSON")->required();
  ablate_sub->add_option("--out", ab.output_dir, "overrides base.output_dir");
  ablate_sub->add_flag("--overwrite", ab.overwrite);

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_sub->add_option("--checkpoint", ev.checkpoint)->required();
  eval_sub->add_option("--manifest", ev.manifest)->required();
  eval_sub->add_option("--out", ev.output_dir)->required();
  eval_sub->add_option("--group-by", ev.group_by, "category | scatter");
  eval_sub->add_option("--split", ev.split, "val | train | all");
  eval_sub->add_flag("--overwrite", ev.overwrite);

  std::uint64_t gc_seed = 0;
  auto* gc_sub = app.add_subcommand("gradcheck", "finite-difference checks of every gradient");
  gc_sub->add_option("--seed", gc_seed);

  ExportArgs ex;
  auto* ex_sub = app.add_subcommand("export-maps", "export per-slice entropy maps as CSV");
  ex_sub->add_option("--checkpoint", ex.checkpoint)->required();
  ex_sub->add_option("--image", ex.image, "image volume (.json/.bin stem)")->required();
  ex_sub->add_option("--out", ex.output_dir)->required();
  ex_sub->add_option("--axis", ex.axis, "H | W | D");
  ex_sub->add_option("--gambling-temperature", ex.gambling_temperature,
                     "entropy of the gambling softmax at this temperature");
  ex_sub->add_flag("--overwrite", ex.overwrite);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return gen_data(gen, as_json);
    if (train_sub->parsed()) return train_cmd(tr, as_json);
    if (ablate_sub->parsed()) return ablate_cmd(ab, as_json);
    if (eval_sub->parsed()) return eval_cmd(ev, as_json);
    if (gc_sub->parsed()) return gradcheck_cmd(gc_seed, as_json);
    if (ex_sub->parsed()) return export_cmd(ex, as_json);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitIo;
  } catch (const CorruptFileError& e) {
    std::fprintf(stderr, "corrupt file: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace dycon
