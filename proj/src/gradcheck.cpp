#include "dycon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dycon/fecl.hpp"
#include "dycon/supervised_losses.hpp"
#include "dycon/trainer.hpp"
#include "dycon/uncl.hpp"

namespace dycon {

namespace {

// Random simplex points with every entry in [margin, 1 - margin].
std::vector<double> random_probs(std::mt19937_64& rng, const Shape& shape, double margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = shape.voxels_per_item();
  std::vector<double> p(shape.size());
  std::vector<double> col(shape.channels);
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t v = 0; v < n; ++v) {
      double sum = 0.0;
      for (auto& x : col) sum += (x = u(rng));
      const double room = 1.0 - margin * static_cast<double>(shape.channels);
      for (std::size_t c = 0; c < shape.channels; ++c)
        p[(b * shape.channels + c) * n + v] = margin + room * col[c] / sum;
    }
  }
  return p;
}

template <typename Loss>
double central_difference(std::vector<double>& x, std::size_t i, Loss&& loss) {
  const double saved = x[i];
  x[i] = saved + kFdStep;
  const double up = loss();
  x[i] = saved - kFdStep;
  const double down = loss();
  x[i] = saved;
  return (up - down) / (2.0 * kFdStep);
}

std::vector<double> random_unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(rows * dim);
  for (auto& x : v) x = g(rng);
  return normalize_rows(v, dim);
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradcheckSuite check_uncl(std::uint64_t seed, int draws) {
  GradcheckSuite suite{"uncl", 0, 0.0, 1e-6};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> beta_dist(0.0, 1.0);
  std::uniform_int_distribution<int> classes(2, 4);
  const EntropyMode modes[] = {EntropyMode::dual, EntropyMode::student_only,
                               EntropyMode::teacher_only};
  for (int t = 0; t < draws; ++t) {
    const Shape shape{1, static_cast<std::size_t>(classes(rng)), {2, 2, 2}};
    auto ps = random_probs(rng, shape, 1e-3);
    const auto pt = random_probs(rng, shape, 1e-3);
    const double beta = beta_dist(rng);
    const EntropyMode mode = modes[t % 3];
    const auto analytic = uncl_evaluate(ps, pt, shape, beta, mode, true).grad_ps;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const double fd = central_difference(
          ps, i, [&] { return uncl_evaluate(ps, pt, shape, beta, mode, false).loss; });
      suite.max_relative_error =
          std::max(suite.max_relative_error, relative_error(analytic[i], fd));
      ++suite.probes;
    }
  }
  return suite;
}

GradcheckSuite check_supervised(std::uint64_t seed, int draws) {
  GradcheckSuite suite{"supervised", 0, 0.0, 1e-6};
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution fg(0.3);
  for (int t = 0; t < draws; ++t) {
    const Shape shape{2, 2, {3, 2, 2}};
    auto p = random_probs(rng, shape, 1e-3);
    std::vector<std::int32_t> labels(shape.voxel_count());
    for (auto& l : labels) l = fg(rng) ? 1 : 0;
    const LabelField y(shape.batch, shape.spatial, labels, 2);
    const auto dice = dice_loss(p, shape, y).grad;
    const auto ce = ce_loss(p, shape, y).grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double fd_dice = central_difference(p, i, [&] { return dice_loss(p, shape, y).loss; });
      const double fd_ce = central_difference(p, i, [&] { return ce_loss(p, shape, y).loss; });
      suite.max_relative_error = std::max(
          {suite.max_relative_error, relative_error(dice[i], fd_dice), relative_error(ce[i], fd_ce)});
      suite.probes += 2;
    }
  }
  return suite;
}

GradcheckSuite check_fecl(std::uint64_t seed, int draws) {
  GradcheckSuite suite{"fecl", 0, 0.0, 1e-5};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t patches = 6, dim = 4;
  for (int t = 0; t < draws; ++t) {
    PatchEmbeddings zs{1, dim, random_unit_rows(rng, patches, dim), {0, 0, 0, 1, 1, 1},
                       EmbeddingSource::student, true};
    PatchEmbeddings zt{1, dim, random_unit_rows(rng, patches, dim), zs.patch_class,
                       EmbeddingSource::teacher, true};
    std::vector<double> h(patches);
    for (auto& x : h) x = u(rng);
    FeclOptions opts;
    opts.top_k = 2;
    const auto plan = fecl_plan(zs, zt, opts, h);
    const auto analytic = fecl_evaluate(plan, zs.vectors, zt.vectors, true).grad_student;
    auto x = zs.vectors;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd =
          central_difference(x, i, [&] { return fecl_evaluate(plan, x, zt.vectors, false).loss; });
      suite.max_relative_error =
          std::max(suite.max_relative_error, relative_error(analytic[i], fd));
      ++suite.probes;
    }
  }
  return suite;
}

GradcheckSuite check_composite(std::uint64_t seed) {
  GradcheckSuite suite{"end_to_end", 0, 0.0, 1e-5};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution fg(0.4);

  const NetConfig net{4, 6, 2};
  ParamSet student = ParamSet::initialize(net, seed ^ 0x51ULL);
  ParamSet teacher = ParamSet::initialize(net, seed ^ 0x77ULL);
  // Non-zero biases so every bias gradient is exercised.
  for (auto* t : student.tensors())
    for (auto& v : *t) v += 0.05 * g(rng);

  const Dims3 spatial{4, 4, 4};
  const std::size_t n = spatial.count();
  StepBatch batch;
  batch.spatial = spatial;
  batch.labeled = 1;
  batch.unlabeled = 1;
  std::vector<std::int32_t> labels(n);
  for (auto& l : labels) l = fg(rng) ? 1 : 0;
  batch.labels = LabelField(1, spatial, labels, 2);
  for (std::size_t i = 0; i < n; ++i) {
    batch.labeled_images.push_back(g(rng));
    batch.student_views.push_back(g(rng));
    batch.teacher_views.push_back(g(rng));
  }
  batch.patch_class_override = {{0, 1, 0, 1, 1, 0, 0, 1}};

  StepOptions options;
  options.eta = 0.7;
  options.beta = 0.8;
  options.patches_per_axis = 2;
  options.fecl.top_k = 3;

  const auto first = compute_step(student, teacher, batch, options);
  const FeclState frozen = first.fecl_state;
  auto analytic = first.grads.tensors();
  auto params = student.tensors();
  for (std::size_t t = 0; t < ParamSet::kTensorCount; ++t) {
    auto& x = *params[t];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd = central_difference(x, i, [&] {
        return compute_step(student, teacher, batch, options, &frozen, false).total;
      });
      suite.max_relative_error =
          std::max(suite.max_relative_error, relative_error((*analytic[t])[i], fd));
      ++suite.probes;
    }
  }
  return suite;
}

std::vector<GradcheckSuite> run_gradcheck(std::uint64_t seed) {
  return {check_uncl(seed), check_supervised(seed + 1), check_fecl(seed + 2),
          check_composite(seed + 3)};
}

}  // namespace dycon
