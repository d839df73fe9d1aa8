#include "dycon/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "dycon/error.hpp"
#include "dycon/supervised_losses.hpp"
#include "dycon/uncertainty.hpp"

namespace dycon {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + stream * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void accumulate(ParamSet& into, const ParamSet& add) {
  auto dst = into.tensors();
  auto src = add.tensors();
  for (std::size_t t = 0; t < ParamSet::kTensorCount; ++t)
    for (std::size_t i = 0; i < dst[t]->size(); ++i) (*dst[t])[i] += (*src[t])[i];
}

std::vector<int> teacher_argmax(const ForwardCache& cache, std::size_t item) {
  const std::size_t n = cache.spatial.count();
  const auto C = static_cast<std::size_t>(cache.classes);
  const double* p = cache.probs.data() + item * C * n;
  std::vector<int> out(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (p[c * n + v] > p[best * n + v]) best = c;
    out[v] = static_cast<int>(best);
  }
  return out;
}

bool fits_float(const ParamSet& p) {
  for (const auto* t : p.tensors())
    for (double v : *t)
      if (!(std::abs(v) <= static_cast<double>(std::numeric_limits<float>::max()))) return false;
  return true;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

}  // namespace

StepOptions StepOptions::from(const RunConfig& config, double beta) {
  StepOptions o;
  o.eta = config.eta;
  o.beta = beta;
  o.entropy_mode = config.entropy_mode;
  o.use_uncl = config.use_uncl;
  o.use_fecl = config.use_fecl;
  o.fecl.tau = config.tau;
  o.fecl.gamma = config.gamma;
  o.fecl.top_k = config.top_k;
  o.patches_per_axis = config.patches_per_axis;
  o.gambling_temperature = config.gambling_temperature;
  o.normalize_patch_entropy = config.normalize_patch_entropy;
  return o;
}

StepResult compute_step(const ParamSet& student, const ParamSet& teacher, const StepBatch& batch,
                        const StepOptions& options, const FeclState* frozen, bool with_grad) {
  StepResult r;
  r.grads = ParamSet::zeros(student.config);
  const std::size_t n = batch.spatial.count();

  if (batch.labeled > 0) {
    if (!batch.labels) throw ContractError("compute_step: labeled images without labels");
    const auto cache = forward(student, batch.labeled_images, batch.labeled, batch.spatial, false);
    const auto sup = supervised_loss(cache.probs, cache.prob_shape(), *batch.labels);
    r.dice = sup.dice_loss;
    r.ce = sup.ce_loss;
    r.sup = sup.dice_loss + sup.ce_loss;
    if (with_grad) accumulate(r.grads, backward(student, cache, sup.grad_ps, {}));
  }

  if (options.eta > 0.0 && batch.unlabeled > 0) {
    const std::size_t U = batch.unlabeled;
    const bool fecl_on = options.use_fecl;
    const auto cs = forward(student, batch.student_views, U, batch.spatial, fecl_on);
    const auto ct = forward(teacher, batch.teacher_views, U, batch.spatial, fecl_on);
    const Shape pshape = cs.prob_shape();

    std::vector<double> grad_p;
    if (options.use_uncl) {
      auto u = uncl_evaluate(cs.probs, ct.probs, pshape, options.beta, options.entropy_mode, with_grad);
      r.consistency = u.loss;
      grad_p = std::move(u.grad_ps);
    } else {
      auto m = mse_consistency(cs.probs, ct.probs, pshape);
      r.consistency = m.loss;
      grad_p = std::move(m.grad_ps);
    }
    for (double& g : grad_p) g *= options.eta;

    std::vector<double> grad_z;
    if (fecl_on) {
      const std::size_t E = static_cast<std::size_t>(student.config.embed_dim);
      const int k = options.patches_per_axis;
      if (with_grad) grad_z.assign(U * E * n, 0.0);
      if (frozen && frozen->plans.size() != U)
        throw ContractError("compute_step: frozen FeCL state does not match the batch");
      for (std::size_t b = 0; b < U; ++b) {
        const std::span<const double> zs_grid(cs.z_grid.data() + b * E * n, E * n);
        const auto means = patch_means(zs_grid, E, batch.spatial, k);
        const auto zs = normalize_rows(means, E);
        FeclPlan plan;
        std::vector<double> zt;
        if (frozen) {
          plan = frozen->plans[b];
          zt = frozen->teacher_vectors[b];
        } else {
          const std::span<const double> zt_grid(ct.z_grid.data() + b * E * n, E * n);
          zt = normalize_rows(patch_means(zt_grid, E, batch.spatial, k), E);
          std::vector<int> classes;
          if (b < batch.patch_class_override.size()) {
            classes = batch.patch_class_override[b];
          } else {
            const auto pseudo = teacher_argmax(ct, b);
            std::vector<std::int32_t> mask(pseudo.begin(), pseudo.end());
            classes = patch_labels(mask, batch.spatial, k, student.config.classes);
          }
          PatchEmbeddings zs_emb{k, E, zs, classes, EmbeddingSource::student, true};
          PatchEmbeddings zt_emb{k, E, zt, classes, EmbeddingSource::teacher, true};
          // Gambling-softmax entropy of the student, pooled per patch.
          const std::size_t C = static_cast<std::size_t>(student.config.classes);
          const Shape item{1, C, batch.spatial};
          std::vector<double> probs(cs.probs.begin() + static_cast<std::ptrdiff_t>(b * C * n),
                                    cs.probs.begin() + static_cast<std::ptrdiff_t>((b + 1) * C * n));
          const auto gs = gambling_softmax(ProbabilityField(item, std::move(probs)),
                                           options.gambling_temperature);
          const auto h = entropy(gs);
          const auto h_patch = patch_entropy(h.values, batch.spatial, k, student.config.classes,
                                             options.normalize_patch_entropy);
          plan = fecl_plan(zs_emb, zt_emb, options.fecl, h_patch);
        }
        const auto res = fecl_evaluate(plan, zs, zt, with_grad);
        r.fecl += res.loss / static_cast<double>(U);
        if (with_grad && !res.degenerate) {
          auto g = res.grad_student;
          for (double& x : g) x *= options.eta / static_cast<double>(U);
          const auto gg = partition_average_backward(g, means, E, batch.spatial, k);
          std::copy(gg.begin(), gg.end(), grad_z.begin() + static_cast<std::ptrdiff_t>(b * E * n));
        }
        r.fecl_state.plans.push_back(std::move(plan));
        r.fecl_state.teacher_vectors.push_back(std::move(zt));
      }
    }
    if (with_grad) accumulate(r.grads, backward(student, cs, grad_p, grad_z));
  }

  r.total = r.sup + options.eta * (r.consistency + r.fecl);
  return r;
}

// --- training ---------------------------------------------------------------------

namespace {

struct LoadedVolume {
  const VolumeEntry* entry;
  VolumeBatch image;
  LabelField mask;
};

struct TrainingData {
  DatasetManifest manifest;
  std::vector<LoadedVolume> labeled;
  std::vector<LoadedVolume> unlabeled;
  std::vector<LoadedVolume> val;
};

TrainingData load_training_data(const RunConfig& config) {
  TrainingData data;
  data.manifest = DatasetManifest::load(config.manifest);
  const auto& root = data.manifest.root;

  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < data.manifest.volumes.size(); ++i)
    if (data.manifest.volumes[i].split == "train") train.push_back(i);
  std::vector<bool> labeled(data.manifest.volumes.size(), false);
  if (config.labeled_ratio > 0.0) {
    std::vector<std::size_t> order = train;
    std::mt19937_64 rng(mix(data.manifest.seed, 17));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = labeled_count(order.size(), config.labeled_ratio);
    for (std::size_t r = 0; r < n; ++r) labeled[order[r]] = true;
  } else {
    for (auto i : train) labeled[i] = data.manifest.volumes[i].labeled;
  }

  for (std::size_t i = 0; i < data.manifest.volumes.size(); ++i) {
    const auto& e = data.manifest.volumes[i];
    LoadedVolume v{&data.manifest.volumes[i], read_volume_batch(root / e.image),
                   read_label_field(root / e.mask)};
    if (e.split == "val")
      data.val.push_back(std::move(v));
    else if (labeled[i])
      data.labeled.push_back(std::move(v));
    else
      data.unlabeled.push_back(std::move(v));
  }
  if (data.labeled.empty()) throw ConfigError("training set has no labeled volumes");
  return data;
}

Dims3 clamp_crop(Dims3 crop, Dims3 volume) {
  return {std::min(crop.h, volume.h), std::min(crop.w, volume.w), std::min(crop.d, volume.d)};
}

MetricReport validate_student(const ParamSet& student, const std::vector<LoadedVolume>& val) {
  std::vector<VolumeMetrics> rows;
  for (const auto& v : val) {
    const auto cache = forward(student, v.image, false);
    const auto pred = predict_labels(cache);
    auto m = evaluate_masks(pred.data(), v.mask.data(), v.mask.spatial());
    m.volume_id = v.entry->id;
    m.category = to_string(v.entry->category);
    m.scatter = to_string(v.entry->scatter);
    rows.push_back(std::move(m));
  }
  return MetricReport::from(std::move(rows));
}

void save_pair(const std::filesystem::path& dir, const ParamSet& student, const ParamSet& teacher,
               int epoch, std::uint64_t seed) {
  save_checkpoint(dir, student, {"aspp-lite-v1", epoch, seed});
  save_checkpoint(dir / "teacher", teacher, {"aspp-lite-v1", epoch, seed});
}

std::string timing_csv(const std::vector<EpochLog>& logs) {
  std::string out = "epoch,wall_seconds\n";
  for (const auto& l : logs) out += std::to_string(l.epoch) + "," + fmt(l.wall_seconds) + "\n";
  return out;
}

nlohmann::json summary_json(const TrainResult& r) {
  return {{"status", r.status == RunStatus::ok ? "ok" : "diverged"},
          {"message", r.message},
          {"epochs_run", r.epochs.size()},
          {"best_dice", r.best_dice},
          {"best_epoch", r.best_epoch},
          {"final",
           {{"dice", r.final_metrics.mean.dice},
            {"iou", r.final_metrics.mean.iou},
            {"hd95", r.final_metrics.mean.hd95},
            {"asd", r.final_metrics.mean.asd}}}};
}

}  // namespace

std::string epoch_log_csv(const std::vector<EpochLog>& logs) {
  std::string out =
      "epoch,beta,loss_sup,loss_uncl,loss_fecl,loss_total,val_dice,val_iou,val_hd95,val_asd\n";
  for (const auto& l : logs) {
    out += std::to_string(l.epoch) + "," + fmt(l.beta) + "," + fmt(l.loss_sup) + "," +
           fmt(l.loss_uncl) + "," + fmt(l.loss_fecl) + "," + fmt(l.loss_total) + "," +
           fmt(l.val_dice) + "," + fmt(l.val_iou) + "," + fmt(l.val_hd95) + "," + fmt(l.val_asd) +
           "\n";
  }
  return out;
}

TrainResult train(const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (config.output_dir.empty()) throw ConfigError("run config needs an output_dir");
  const auto log_path = config.output_dir / "epoch_log.csv";
  if (std::filesystem::exists(log_path) && !config.overwrite)
    throw IoError(log_path.string() + " exists; set overwrite to replace it");
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create " + config.output_dir.string());
  config.save(config.output_dir / "resolved_config.json");

  const auto data = load_training_data(config);
  const NetConfig net{config.features, config.embed_dim, config.classes};
  const BetaSchedule schedule = config.schedule();

  TrainResult result;
  result.student = ParamSet::initialize(net, mix(config.seed, 0));
  result.teacher = result.student;
  OptimState opt = OptimState::for_params(result.student, config.lr, config.momentum,
                                          config.weight_decay);

  const std::size_t L = static_cast<std::size_t>(config.batch_size / 2);
  const std::size_t U = static_cast<std::size_t>(config.batch_size) - L;
  const bool use_unlabeled = config.eta > 0.0 && !data.unlabeled.empty();
  std::size_t iterations = static_cast<std::size_t>(config.iterations_per_epoch);
  if (iterations == 0) {
    iterations = data.unlabeled.empty() ? (data.labeled.size() + L - 1) / L
                                        : (data.unlabeled.size() + U - 1) / U;
  }

  std::mt19937_64 labeled_rng(mix(config.seed, 1));
  std::mt19937_64 unlabeled_rng(mix(config.seed, 2));
  const Dims3 volume_dims = data.labeled.front().image.shape().spatial;
  const Dims3 crop = clamp_crop(config.crop, volume_dims);
  const std::size_t n = crop.count();

  auto write_outputs = [&]() {
    write_text(log_path, epoch_log_csv(result.epochs));
    write_text(config.output_dir / "timing.csv", timing_csv(result.epochs));
    write_text(config.output_dir / "summary.json", summary_json(result).dump(2) + "\n");
  };

  std::vector<std::size_t> unlabeled_order(data.unlabeled.size());
  std::size_t unlabeled_cursor = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double beta = beta_at(schedule, epoch);
    const StepOptions options = StepOptions::from(config, beta);
    EpochLog log;
    log.epoch = epoch;
    log.beta = beta;

    if (use_unlabeled) {
      for (std::size_t i = 0; i < unlabeled_order.size(); ++i) unlabeled_order[i] = i;
      std::shuffle(unlabeled_order.begin(), unlabeled_order.end(), unlabeled_rng);
      unlabeled_cursor = 0;
    }

    for (std::size_t it = 0; it < iterations; ++it) {
      StepBatch batch;
      batch.spatial = crop;
      batch.labeled = L;
      batch.labeled_images.reserve(L * n);
      std::vector<std::int32_t> labels;
      labels.reserve(L * n);
      std::uniform_int_distribution<std::size_t> pick(0, data.labeled.size() - 1);
      for (std::size_t b = 0; b < L; ++b) {
        const auto& v = data.labeled[pick(labeled_rng)];
        const auto params = sample_augment(labeled_rng(), v.image.shape().spatial, crop);
        const auto x = apply_augment(params, v.image);
        const auto y = apply_augment(params, v.mask);
        batch.labeled_images.insert(batch.labeled_images.end(), x.data().begin(), x.data().end());
        labels.insert(labels.end(), y.data().begin(), y.data().end());
      }
      batch.labels = LabelField(L, crop, std::move(labels), config.classes);

      if (use_unlabeled) {
        batch.unlabeled = U;
        batch.student_views.reserve(U * n);
        batch.teacher_views.reserve(U * n);
        for (std::size_t b = 0; b < U; ++b) {
          if (unlabeled_cursor == unlabeled_order.size()) unlabeled_cursor = 0;
          const auto& v = data.unlabeled[unlabeled_order[unlabeled_cursor++]];
          const auto params = sample_augment(unlabeled_rng(), v.image.shape().spatial, crop);
          const auto x = apply_augment(params, v.image);
          std::mt19937_64 noise_rng(unlabeled_rng());
          std::normal_distribution<double> noise(0.0, config.view_noise);
          for (float value : x.data()) {
            batch.student_views.push_back(static_cast<double>(value) + noise(noise_rng));
            batch.teacher_views.push_back(static_cast<double>(value) + noise(noise_rng));
          }
        }
      }

      StepResult step = compute_step(result.student, result.teacher, batch, options);
      bool finite = std::isfinite(step.total);
      const ParamSet student_before = result.student;
      if (finite) {
        try {
          const ParamSet teacher_before = hooks.on_sgd_step ? result.teacher : ParamSet{};
          sgd_step(result.student, step.grads, opt);
          if (hooks.on_sgd_step) hooks.on_sgd_step(teacher_before, result.teacher);
          // checkpoints are float32, so parameters must stay within its range
          finite = fits_float(result.student);
        } catch (const DivergedError&) {
          finite = false;
        }
      }
      if (!finite) {
        result.status = RunStatus::diverged;
        result.message = "non-finite loss, gradient or parameters at epoch " +
                         std::to_string(epoch) + ", iteration " + std::to_string(it);
        result.student = student_before;
        if (config.save_checkpoints)
          save_pair(config.output_dir / "checkpoints" / "last_good", result.student,
                    result.teacher, epoch, config.seed);
        write_outputs();
        return result;
      }
      ema_update(result.teacher, result.student, config.ema_alpha);

      log.loss_sup += step.sup;
      log.loss_uncl += step.consistency;
      log.loss_fecl += step.fecl;
      log.loss_total += step.total;
    }
    const auto inv_it = 1.0 / static_cast<double>(iterations);
    log.loss_sup *= inv_it;
    log.loss_uncl *= inv_it;
    log.loss_fecl *= inv_it;
    log.loss_total *= inv_it;

    result.final_metrics = validate_student(result.student, data.val);
    log.val_dice = result.final_metrics.mean.dice;
    log.val_iou = result.final_metrics.mean.iou;
    log.val_hd95 = result.final_metrics.mean.hd95;
    log.val_asd = result.final_metrics.mean.asd;
    if (result.best_epoch < 0 || log.val_dice > result.best_dice) {
      result.best_dice = log.val_dice;
      result.best_epoch = epoch;
      if (config.save_checkpoints)
        save_pair(config.output_dir / "checkpoints" / "best", result.student, result.teacher, epoch,
                  config.seed);
    }
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(log);
    write_outputs();
  }

  if (config.save_checkpoints)
    save_pair(config.output_dir / "checkpoints" / "final", result.student, result.teacher,
              config.epochs, config.seed);
  write_outputs();
  return result;
}

// --- ablation -----------------------------------------------------------------------

namespace {

nlohmann::json axis_override(const std::string& axis, const nlohmann::json& value) {
  if (axis == "beta") {
    if (value.is_string()) {
      const auto mode = value.get<std::string>();
      if (mode != "none" && mode != "adaptive")
        throw ConfigError("beta axis values must be \"none\", \"adaptive\" or a number");
      return {{"beta", {{"mode", mode}}}};
    }
    if (value.is_number()) return {{"beta", {{"mode", "fixed"}, {"fixed_value", value}}}};
    throw ConfigError("beta axis values must be \"none\", \"adaptive\" or a number");
  }
  if (axis == "entropy_mode" || axis == "gamma" || axis == "top_k" || axis == "use_uncl" ||
      axis == "use_fecl" || axis == "eta")
    return {{axis, value}};
  throw ConfigError("unsupported ablation axis '" + axis + "'");
}

std::string value_label(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

RunConfig apply_overrides(const RunConfig& base, const nlohmann::json& overrides) {
  auto j = base.to_json();
  j.merge_patch(overrides);
  return RunConfig::from_json(j);
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

AblationGrid AblationGrid::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("base")) throw ConfigError("ablation grid needs a base config");
  for (const auto& [key, _] : j.items())
    if (key != "base" && key != "seeds" && key != "axes" && key != "cells")
      throw ConfigError("unknown ablation grid key '" + key + "'");
  const bool has_axes = j.contains("axes"), has_cells = j.contains("cells");
  if (has_axes == has_cells) throw ConfigError("ablation grid needs exactly one of axes or cells");

  AblationGrid g;
  g.base = RunConfig::from_json(j["base"]);
  try {
    if (j.contains("seeds")) {
      g.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    } else {
      g.seeds = {g.base.seed};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ablation seeds: ") + e.what());
  }
  if (g.seeds.empty()) throw ConfigError("ablation grid needs at least one seed");

  if (has_axes) {
    const auto& axes = j["axes"];
    if (!axes.is_object() || axes.empty()) throw ConfigError("ablation axes must be a non-empty object");
    std::vector<std::vector<nlohmann::json>> values;
    for (const auto& [name, list] : axes.items()) {
      if (!list.is_array() || list.empty())
        throw ConfigError("ablation axis '" + name + "' needs a non-empty list of values");
      g.axes.push_back(name);
      values.emplace_back(list.begin(), list.end());
    }
    std::vector<std::size_t> idx(values.size(), 0);
    while (true) {
      AblationCell cell;
      cell.overrides = nlohmann::json::object();
      for (std::size_t a = 0; a < values.size(); ++a) {
        cell.overrides.merge_patch(axis_override(g.axes[a], values[a][idx[a]]));
        if (a) cell.name += ",";
        cell.name += g.axes[a] + "=" + value_label(values[a][idx[a]]);
      }
      g.cells.push_back(std::move(cell));
      std::size_t a = values.size();
      while (a > 0) {
        --a;
        if (++idx[a] < values[a].size()) break;
        idx[a] = 0;
        if (a == 0) {
          a = values.size() + 1;
          break;
        }
      }
      if (a == values.size() + 1) break;
    }
  } else {
    const auto& cells = j["cells"];
    if (!cells.is_array() || cells.empty()) throw ConfigError("ablation cells must be a non-empty list");
    for (const auto& c : cells) {
      if (!c.contains("name") || !c["name"].is_string())
        throw ConfigError("every ablation cell needs a name");
      AblationCell cell{c["name"].get<std::string>(), c.value("overrides", nlohmann::json::object())};
      for (const auto& existing : g.cells)
        if (existing.name == cell.name) throw ConfigError("duplicate ablation cell '" + cell.name + "'");
      g.cells.push_back(std::move(cell));
    }
  }
  // Reject cells that do not resolve to valid configs up front.
  for (const auto& cell : g.cells) apply_overrides(g.base, cell.overrides);
  return g;
}

AblationResult ablate(const AblationGrid& grid) {
  if (grid.cells.empty() || grid.seeds.empty()) throw ConfigError("empty ablation grid");
  AblationResult out;
  for (const auto& cell : grid.cells) {
    AblationSummaryRow summary;
    summary.cell = cell.name;
    for (auto seed : grid.seeds) {
      RunConfig cfg = apply_overrides(grid.base, cell.overrides);
      cfg.seed = seed;
      std::string dir_name = cell.name;
      for (char& c : dir_name)
        if (c == ',' || c == '=' || c == ' ' || c == '/') c = '_';
      cfg.output_dir = grid.base.output_dir / dir_name / ("seed_" + std::to_string(seed));
      const auto r = train(cfg);
      AblationRow row{cell.name, cell.overrides, seed, r.status, r.final_metrics, r.best_dice};
      summary.runs += 1;
      summary.mean_dice += r.final_metrics.mean.dice;
      summary.mean_iou += r.final_metrics.mean.iou;
      summary.mean_hd95 += r.final_metrics.mean.hd95;
      summary.mean_asd += r.final_metrics.mean.asd;
      out.rows.push_back(std::move(row));
    }
    const auto n = static_cast<double>(summary.runs);
    summary.mean_dice /= n;
    summary.mean_iou /= n;
    summary.mean_hd95 /= n;
    summary.mean_asd /= n;
    out.summary.push_back(summary);
  }

  std::error_code ec;
  std::filesystem::create_directories(grid.base.output_dir, ec);
  std::string rows = "cell,overrides,seed,status,dice,iou,hd95,asd,best_dice\n";
  for (const auto& r : out.rows) {
    rows += csv_quote(r.cell) + "," + csv_quote(r.overrides.dump()) + "," + std::to_string(r.seed) +
            "," + (r.status == RunStatus::ok ? "ok" : "diverged") + "," +
            fmt(r.final_metrics.mean.dice) + "," + fmt(r.final_metrics.mean.iou) + "," +
            fmt(r.final_metrics.mean.hd95) + "," + fmt(r.final_metrics.mean.asd) + "," +
            fmt(r.best_dice) + "\n";
  }
  write_text(grid.base.output_dir / "ablation.csv", rows);
  std::string summary = "cell,runs,mean_dice,mean_iou,mean_hd95,mean_asd\n";
  for (const auto& s : out.summary)
    summary += csv_quote(s.cell) + "," + std::to_string(s.runs) + "," + fmt(s.mean_dice) + "," +
               fmt(s.mean_iou) + "," + fmt(s.mean_hd95) + "," + fmt(s.mean_asd) + "\n";
  write_text(grid.base.output_dir / "ablation_summary.csv", summary);
  return out;
}

// --- evaluation ------------------------------------------------------------------------

Predictor checkpoint_predictor(const ParamSet& params) {
  return [params](const VolumeBatch& image, const VolumeEntry&) {
    return predict_labels(forward(params, image, false));
  };
}

EvaluationResult evaluate(const Predictor& predictor, const DatasetManifest& manifest,
                          GroupBy group_by, const std::string& split) {
  if (split != "val" && split != "train" && split != "all")
    throw ConfigError("evaluation split must be val, train or all");
  EvaluationResult out;
  std::vector<VolumeMetrics> rows;
  for (const auto& e : manifest.volumes) {
    if (split != "all" && e.split != split) continue;
    const auto image = read_volume_batch(manifest.root / e.image);
    const auto mask = read_label_field(manifest.root / e.mask);
    const auto pred = predictor(image, e);
    if (pred.batch() != mask.batch() || !(pred.spatial() == mask.spatial()))
      throw ContractError("predictor returned a mask of the wrong shape for " + e.id);
    auto m = evaluate_masks(pred.data(), mask.data(), mask.spatial());
    m.volume_id = e.id;
    m.category = to_string(e.category);
    m.scatter = to_string(e.scatter);
    rows.push_back(std::move(m));
  }
  out.report = MetricReport::from(std::move(rows));

  std::vector<std::string> groups;
  if (group_by == GroupBy::category)
    groups = {"small", "medium", "large"};
  else
    groups = {"scattered", "non-scattered"};
  for (const auto& g : groups) {
    GroupRow row;
    row.group = g;
    for (const auto& v : out.report.volumes) {
      const auto& key = group_by == GroupBy::category ? v.category : v.scatter;
      if (key != g) continue;
      ++row.volumes;
      row.dice += v.dice;
      row.iou += v.iou;
      row.hd95 += v.hd95;
      row.asd += v.asd;
    }
    if (row.volumes == 0) {
      out.warnings.push_back("group '" + g + "' has no volumes; row omitted");
      continue;
    }
    const auto n = static_cast<double>(row.volumes);
    row.dice /= n;
    row.iou /= n;
    row.hd95 /= n;
    row.asd /= n;
    out.groups.push_back(row);
  }
  return out;
}

EvaluationResult evaluate(const std::filesystem::path& checkpoint,
                          const std::filesystem::path& manifest, GroupBy group_by,
                          const std::string& split) {
  const auto params = load_checkpoint(checkpoint);
  return evaluate(checkpoint_predictor(params), DatasetManifest::load(manifest), group_by, split);
}

void write_evaluation(const EvaluationResult& result, const std::filesystem::path& report_csv,
                      const std::filesystem::path& groups_csv) {
  write_report_csv(result.report, report_csv);
  std::string g = "group,volumes,dice,iou,hd95,asd\n";
  for (const auto& r : result.groups)
    g += r.group + "," + std::to_string(r.volumes) + "," + fmt(r.dice) + "," + fmt(r.iou) + "," +
         fmt(r.hd95) + "," + fmt(r.asd) + "\n";
  write_text(groups_csv, g);
}

}  // namespace dycon
