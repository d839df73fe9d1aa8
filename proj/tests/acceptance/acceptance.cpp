// Acceptance harness: prints one PASS/FAIL line per criterion.
//
//   dycon_acceptance --workdir DIR [--criteria 1,2,...]
//
// Criteria 8 and 9 train on a synthetic benchmark and take roughly half an
// hour on one core; the rest finish in seconds.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dycon/fecl.hpp"
#include "dycon/gradcheck.hpp"
#include "dycon/metrics.hpp"
#include "dycon/segnet.hpp"
#include "dycon/synthvol.hpp"
#include "dycon/trainer.hpp"
#include "dycon/uncl.hpp"
#include "oracles.hpp"

using namespace dycon;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ProbabilityField voxel(std::vector<double> p) {
  const std::size_t c = p.size();
  return ProbabilityField({1, c, {1, 1, 1}}, std::move(p));
}

// Random distributions with every entry >= margin, one per voxel.
std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t classes, std::size_t n,
                                   double margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(classes * n);
  std::vector<double> col(classes);
  for (std::size_t v = 0; v < n; ++v) {
    double sum = 0.0;
    for (auto& x : col) sum += (x = u(rng) + 1e-3);
    for (std::size_t c = 0; c < classes; ++c)
      p[c * n + v] = margin + (1.0 - margin * static_cast<double>(classes)) * col[c] / sum;
  }
  return p;
}

// --- 1 ------------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst_uncl = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s)
    worst_uncl = std::max(worst_uncl, check_uncl(1000 + s, 100).max_relative_error);
  const double uncl_time = seconds_since(t0) / 3.0;
  const auto sup = check_supervised(2000, 100);
  const auto fecl = check_fecl(3000, 100);
  const bool pass = worst_uncl < 1e-6 && sup.max_relative_error < 1e-6 &&
                    fecl.max_relative_error < 1e-5 && uncl_time < 60.0;
  return {pass, "uncl " + fmt("%.2e", worst_uncl) + " (<1e-6, " + fmt("%.2f", uncl_time) +
                    " s per 100 triples), dice+ce " + fmt("%.2e", sup.max_relative_error) +
                    " (<1e-6), fecl " + fmt("%.2e", fecl.max_relative_error) + " (<1e-5)"};
}

// --- 2 ------------------------------------------------------------------------------

Outcome end_to_end_gradient() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t probes = 0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto r = check_composite(4000 + s);
    worst = std::max(worst, r.max_relative_error);
    probes += r.probes;
  }
  const double per_run = seconds_since(t0) / 3.0;
  return {worst < 1e-5 && per_run < 120.0,
          "max rel err " + fmt("%.2e", worst) + " over " + std::to_string(probes) +
              " parameters (<1e-5), " + fmt("%.2f", per_run) + " s per check"};
}

// --- 3 ------------------------------------------------------------------------------

Outcome uncl_anchors() {
  const double a0 = uncl_forward(voxel({1, 0}), voxel({1, 0}), 1.0);
  const double a1 = uncl_forward(voxel({0.5, 0.5}), voxel({0.5, 0.5}), 1.0);
  const double a2 = uncl_forward(voxel({1, 0}), voxel({0.5, 0.5}), 1.0);
  bool pass = std::abs(a0) < 1e-5 && std::abs(a1 - 1.386294) < 1e-5 &&
              std::abs(a2 - 0.859814) < 1e-5;

  // Denominator recovered from the per-voxel consistency term.
  std::mt19937_64 rng(5000);
  std::size_t checked = 0, skipped = 0, violations = 0;
  const std::size_t n = 25000;
  const double betas[4] = {0.0, 0.5, 1.0, 2.0};
  for (int call = 0; call < 4; ++call) {
    const std::size_t c = 2 + static_cast<std::size_t>(call);
    const Shape shape{1, c, {50, 50, 10}};
    const auto ps = random_simplex(rng, c, n, 0.0);
    const auto pt = random_simplex(rng, c, n, 0.0);
    const auto r = uncl_evaluate(ps, pt, shape, betas[call], EntropyMode::dual, false);
    const double hi = 2.0 * std::pow(static_cast<double>(c), betas[call]);
    for (std::size_t v = 0; v < n; ++v) {
      double sq = 0.0;
      for (std::size_t k = 0; k < c; ++k) sq += std::pow(ps[k * n + v] - pt[k * n + v], 2);
      if (sq < 1e-8) {  // ratio not recoverable
        ++skipped;
        continue;
      }
      ++checked;
      const double denom = sq / r.per_voxel_consistency[v];
      if (denom < 2.0 - 1e-9 || denom > hi * (1.0 + 1e-9)) ++violations;
    }
  }
  pass = pass && violations == 0 && checked + skipped == 100000;
  return {pass, "anchors " + fmt("%.7f", a0) + ", " + fmt("%.7f", a1) + ", " + fmt("%.7f", a2) +
                    "; denominator bound violations " + std::to_string(violations) + " of " +
                    std::to_string(checked) + " voxels (" + std::to_string(skipped) +
                    " with p_s ~ p_t skipped)"};
}

// --- 4 ------------------------------------------------------------------------------

Outcome beta_schedule() {
  BetaSchedule s;
  s.mode = BetaMode::adaptive;
  s.beta_max = 1.0;
  s.beta_min = 0.1;
  s.decay = 0.1;
  s.total_epochs = 100;
  const double b0 = beta_at(s, 0);
  const double bT = beta_at(s, 100);
  s.decay = 100.0;
  const double clamp = beta_at(s, 100);
  const bool pass = b0 == 1.0 && std::abs(bT - 0.904837) < 1e-6 && clamp == 0.1;
  return {pass, "beta(0) " + fmt("%.6f", b0) + ", beta(T) " + fmt("%.6f", bT) +
                    ", lambda=100 gives " + fmt("%.6f", clamp)};
}

// --- 5 ------------------------------------------------------------------------------

Outcome fecl_collapse() {
  const FeclOptions unit{1.0, 1.0, 1};
  const auto same = oracle::embeddings({1, 0, 0.6, 0.8}, 2, {0, 0});
  const double no_negative = fecl_forward(same, same, unit, std::vector<double>(2, 0.0)).loss;
  const auto z = oracle::embeddings({1, 0, 1, 0, 0, 1}, 2, {0, 0, 1});
  const auto t = oracle::embeddings({1, 0, 1, 0, 0, 1}, 2, {0, 0, 1}, EmbeddingSource::teacher);
  const double perfect = fecl_forward(z, t, unit, std::vector<double>(3, 0.0)).loss;

  std::mt19937_64 rng(6000);
  std::uniform_int_distribution<int> cls(0, 1), count(3, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const std::size_t p = static_cast<std::size_t>(count(rng)), dim = 4;
    std::vector<int> cs(p), ct(p);
    for (auto& c : cs) c = cls(rng);
    for (auto& c : ct) c = cls(rng);
    // at least one positive pair and one negative
    cs[0] = cs[1] = 0;
    cs[2] = 1;
    const auto zs = oracle::embeddings(oracle::unit_rows(rng, p, dim), dim, cs);
    const auto zt =
        oracle::embeddings(oracle::unit_rows(rng, p, dim), dim, ct, EmbeddingSource::teacher);
    std::vector<double> h(p);
    for (auto& x : h) x = u(rng);
    const FeclOptions opts{0.6, i % 2 ? 0.5 : 2.0, 1 + i % 3};
    const double expected = oracle::brute_force_fecl(zs.vectors, cs, zt.vectors, ct, dim, opts.tau,
                                                     opts.gamma,
                                                     static_cast<std::size_t>(opts.top_k), h);
    worst = std::max(worst, std::abs(fecl_forward(zs, zt, opts, h).loss - expected));
  }
  return {no_negative == 0.0 && perfect == 0.0 && worst < 1e-9,
          "no-negative loss " + fmt("%g", no_negative) + ", perfect-positive loss " +
              fmt("%g", perfect) + ", brute-force max abs diff " + fmt("%.2e", worst)};
}

// --- 6 ------------------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(7000);
  const Dims3 s{12, 14, 16};
  std::vector<oracle::Mask> masks;
  for (int i = 0; i < 50; ++i) masks.push_back(oracle::random_mask(rng, s));
  std::size_t pairs = 0, mismatches = 0, asymmetric = 0;
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = i + 1; j < masks.size(); ++j) {
      const auto& a = masks[i];
      const auto& b = masks[j];
      ++pairs;
      std::size_t na = 0, nb = 0, both = 0;
      for (std::size_t v = 0; v < a.size(); ++v) {
        na += a[v] != 0;
        nb += b[v] != 0;
        both += a[v] && b[v];
      }
      const double dice = 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
      const double iou = static_cast<double>(both) / static_cast<double>(na + nb - both);
      const auto ov = dice_iou(a, b);
      const auto fast = surface_distances(a, b, s);
      const auto slow = oracle::brute_scores(a, b, s);
      if (ov.dice != dice || ov.iou != iou || fast.hd95 != slow.hd95 || fast.asd != slow.asd)
        ++mismatches;
      const auto back = surface_distances(b, a, s);
      if (back.hd95 != fast.hd95 || back.asd != fast.asd) ++asymmetric;
    }
  return {mismatches == 0 && asymmetric == 0,
          std::to_string(pairs) + " pairs on 12x14x16 masks: " + std::to_string(mismatches) +
              " oracle mismatches, " + std::to_string(asymmetric) + " asymmetric"};
}

// --- 7 ------------------------------------------------------------------------------

Outcome ema_closed_form() {
  const NetConfig cfg{4, 6, 2};
  const ParamSet student = ParamSet::initialize(cfg, 8000);
  const ParamSet teacher0 = ParamSet::initialize(cfg, 8001);
  const double alpha = 0.99;
  double worst = 0.0;
  for (int n : {1, 5, 50}) {
    ParamSet t = teacher0;
    for (int i = 0; i < n; ++i) ema_update(t, student, alpha);
    const double an = std::pow(alpha, n);
    const auto tt = t.tensors();
    const auto ts = student.tensors();
    const auto t0 = teacher0.tensors();
    for (std::size_t k = 0; k < ParamSet::kTensorCount; ++k)
      for (std::size_t i = 0; i < tt[k]->size(); ++i)
        worst = std::max(worst,
                         std::abs((*tt[k])[i] - (an * (*t0[k])[i] + (1 - an) * (*ts[k])[i])));
  }
  return {worst < 1e-12, "max abs deviation " + fmt("%.2e", worst) + " for n in {1, 5, 50}"};
}

// --- benchmark shared by 8, 9 and 10 -----------------------------------------------------

const std::vector<std::uint64_t> kSeeds = {0, 1, 2};

fs::path benchmark_data(const fs::path& workdir) {
  const auto dir = workdir / "benchmark_data";
  if (fs::exists(dir / "manifest.json")) {
    const auto m = DatasetManifest::load(dir / "manifest.json");
    if (m.volumes.size() == 40 && m.seed == 2024) return dir / "manifest.json";
  }
  DatasetConfig d;
  d.volumes = 40;
  d.size = {32, 32, 32};
  d.labeled_ratio = 0.1;
  d.val_ratio = 0.2;
  d.seed = 2024;
  d.contrast = 3.0;
  d.output_dir = dir;
  d.overwrite = true;
  build_dataset(d);
  return dir / "manifest.json";
}

RunConfig benchmark_base(const fs::path& manifest, const fs::path& out) {
  RunConfig c;
  c.manifest = manifest;
  c.output_dir = out;
  c.epochs = 40;
  c.batch_size = 4;
  c.iterations_per_epoch = 0;  // one pass over the unlabeled set
  c.crop = {24, 24, 24};
  c.patches_per_axis = 8;
  c.save_checkpoints = false;
  c.overwrite = true;
  return c;
}

double max_run_seconds(const fs::path& root, const AblationResult& r) {
  double worst = 0.0;
  for (const auto& row : r.rows) {
    std::string dir = row.cell;
    for (char& c : dir)
      if (c == ',' || c == '=' || c == ' ' || c == '/') c = '_';
    std::ifstream is(root / dir / ("seed_" + std::to_string(row.seed)) / "timing.csv");
    std::string line;
    std::getline(is, line);
    double total = 0.0;
    while (std::getline(is, line)) total += std::stod(line.substr(line.find(',') + 1));
    worst = std::max(worst, total);
  }
  return worst;
}

std::map<std::string, double> seed_means(const AblationResult& r) {
  std::map<std::string, double> out;
  for (const auto& s : r.summary) out[s.cell] = s.mean_dice;
  return out;
}

std::string per_seed(const AblationResult& r, const std::string& cell) {
  std::string out;
  for (const auto& row : r.rows)
    if (row.cell == cell) out += (out.empty() ? "" : " ") + fmt("%.4f", row.final_metrics.mean.dice);
  return out;
}

void print_table(const AblationResult& r) {
  for (const auto& s : r.summary)
    std::printf("    %-28s mean val dice %.4f  [%s]  iou %.4f  hd95 %.2f  asd %.2f\n",
                s.cell.c_str(), s.mean_dice, per_seed(r, s.cell).c_str(), s.mean_iou,
                s.mean_hd95, s.mean_asd);
}

Outcome directional_ablation(const fs::path& workdir) {
  const auto manifest = benchmark_data(workdir);
  AblationGrid g;
  g.base = benchmark_base(manifest, workdir / "criterion8");
  g.seeds = kSeeds;
  g.cells = {
      {"mt", {{"use_uncl", false}, {"use_fecl", false}}},
      {"uncl_beta_none", {{"use_fecl", false}, {"beta", {{"mode", "none"}}}}},
      {"uncl_beta_adaptive", {{"use_fecl", false}}},
      {"uncl_adaptive_fecl", nlohmann::json::object()},
  };
  const auto r = ablate(g);
  print_table(r);
  auto m = seed_means(r);
  const double mt = m["mt"], none = m["uncl_beta_none"], adaptive = m["uncl_beta_adaptive"],
               fecl = m["uncl_adaptive_fecl"];
  const double longest = max_run_seconds(g.base.output_dir, r);
  const bool pass = adaptive > none && none > mt && fecl > adaptive && longest <= 1800.0;
  auto rel = [](double a, double b) { return a > b ? " > " : " <= "; };
  return {pass, "MT " + fmt("%.4f", mt) + ", none " + fmt("%.4f", none) + rel(none, mt) +
                    "MT, adaptive " + fmt("%.4f", adaptive) + rel(adaptive, none) + "none, +FeCL " +
                    fmt("%.4f", fecl) + rel(fecl, adaptive) + "adaptive; longest run " +
                    fmt("%.0f", longest) + " s"};
}

Outcome entropy_ablation(const fs::path& workdir) {
  const auto manifest = benchmark_data(workdir);
  RunConfig base = benchmark_base(manifest, workdir / "criterion9");
  base.use_fecl = false;
  const auto g = AblationGrid::from_json(
      {{"base", base.to_json()},
       {"seeds", kSeeds},
       {"axes", {{"entropy_mode", {"teacher_only", "student_only", "dual"}}}}});
  const auto r = ablate(g);
  print_table(r);
  auto m = seed_means(r);
  const double teacher = m["entropy_mode=teacher_only"], student = m["entropy_mode=student_only"],
               dual = m["entropy_mode=dual"];
  const bool shape = r.summary.size() == 3;
  return {shape && dual >= std::max(teacher, student),
          std::to_string(r.summary.size()) + "-row table; dual " + fmt("%.4f", dual) +
              " vs teacher-only " + fmt("%.4f", teacher) + ", student-only " +
              fmt("%.4f", student)};
}

// --- 10 -----------------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

Outcome determinism(const fs::path& workdir) {
  const auto manifest = benchmark_data(workdir);
  std::vector<fs::path> dirs = {workdir / "criterion10/run_a", workdir / "criterion10/run_b"};
  for (const auto& d : dirs) {
    RunConfig c = benchmark_base(manifest, d);
    c.epochs = 2;
    c.iterations_per_epoch = 3;
    c.save_checkpoints = true;
    c.seed = 11;
    train(c);
  }
  const bool logs = slurp(dirs[0] / "epoch_log.csv") == slurp(dirs[1] / "epoch_log.csv");
  const auto a = tree_bytes(dirs[0] / "checkpoints");
  const auto b = tree_bytes(dirs[1] / "checkpoints");
  const bool ckpt = !a.empty() && a == b;
  return {logs && ckpt, std::string("epoch logs ") + (logs ? "identical" : "differ") + ", " +
                            std::to_string(a.size()) + " checkpoint files " +
                            (ckpt ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory for datasets and runs");
  app.add_option("--criteria", only, "subset to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  const std::set<int> wanted(only.begin(), only.end());

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity (uncl, dice+ce, fecl)", gradient_fidelity},
      {"end-to-end composite gradient", end_to_end_gradient},
      {"uncl anchors and denominator bound", uncl_anchors},
      {"beta schedule", beta_schedule},
      {"fecl collapse cases and brute force", fecl_collapse},
      {"metric oracles and symmetry", metric_oracles},
      {"ema closed form", ema_closed_form},
      {"directional ablation (MT < UnCL none < UnCL adaptive < +FeCL)",
       [&] { return directional_ablation(workdir); }},
      {"dual-entropy ablation", [&] { return entropy_ablation(workdir); }},
      {"determinism", [&] { return determinism(workdir); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("CRITERION %d %s: %s -- %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
