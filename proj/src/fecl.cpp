#include "dycon/fecl.hpp"

#include <algorithm>
#include <cmath>

#include "dycon/error.hpp"

namespace dycon {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

std::size_t padded_cell(std::size_t extent, int k) {
  const std::size_t kk = static_cast<std::size_t>(k);
  return (extent + kk - 1) / kk;
}

}  // namespace

PatchGrid::PatchGrid(Dims3 spatial_, int k_) : spatial(spatial_), k(k_) {
  if (k <= 0) throw ParameterError("patch count per axis k must be positive");
  if (spatial.count() == 0) throw ContractError("cannot partition an empty grid");
  cell_h = padded_cell(spatial.h, k);
  cell_w = padded_cell(spatial.w, k);
  cell_d = padded_cell(spatial.d, k);
}

std::vector<double> patch_means(std::span<const double> grid, std::size_t channels, Dims3 spatial,
                                int k) {
  const PatchGrid pg(spatial, k);
  const std::size_t n = spatial.count();
  if (grid.size() != channels * n) throw ContractError("patch_means: grid size mismatch");
  const std::size_t patches = pg.patch_count();
  const double inv = 1.0 / static_cast<double>(pg.cell_volume());
  std::vector<double> out(patches * channels, 0.0);
  for (std::size_t p = 0; p < patches; ++p) {
    for (std::size_t e = 0; e < channels; ++e) {
      const double* plane = grid.data() + e * n;
      double sum = 0.0;
      pg.for_each_voxel(p, [&](std::size_t v) { sum += plane[v]; });
      out[p * channels + e] = sum * inv;
    }
  }
  return out;
}

std::vector<double> normalize_rows(std::span<const double> rows, std::size_t dim) {
  std::vector<double> out(rows.begin(), rows.end());
  for (std::size_t r = 0; r * dim < rows.size(); ++r) {
    double* row = out.data() + r * dim;
    const double norm = std::max(std::sqrt(dot(row, row, dim)), 1e-12);
    for (std::size_t e = 0; e < dim; ++e) row[e] /= norm;
  }
  return out;
}

PatchEmbeddings partition_average(std::span<const double> grid, std::size_t channels, Dims3 spatial,
                                  int k) {
  PatchEmbeddings z;
  z.k = k;
  z.dim = channels;
  z.vectors = normalize_rows(patch_means(grid, channels, spatial, k), channels);
  z.patch_class.assign(z.count(), 0);
  z.normalized = true;
  return z;
}

std::vector<double> partition_average_backward(std::span<const double> grad_normalized,
                                               std::span<const double> means, std::size_t channels,
                                               Dims3 spatial, int k) {
  const PatchGrid pg(spatial, k);
  const std::size_t patches = pg.patch_count();
  if (grad_normalized.size() != patches * channels || means.size() != patches * channels)
    throw ContractError("partition_average_backward: size mismatch");
  const std::size_t n = spatial.count();
  const double inv = 1.0 / static_cast<double>(pg.cell_volume());
  std::vector<double> grad_grid(channels * n, 0.0);
  std::vector<double> grad_mean(channels);
  for (std::size_t p = 0; p < patches; ++p) {
    const double* m = means.data() + p * channels;
    const double* g = grad_normalized.data() + p * channels;
    const double norm = std::sqrt(dot(m, m, channels));
    if (norm > 1e-12) {
      // u = m / ‖m‖  =>  dm = (g - u (u·g)) / ‖m‖
      const double ug = dot(m, g, channels) / norm;
      for (std::size_t e = 0; e < channels; ++e) grad_mean[e] = (g[e] - (m[e] / norm) * ug) / norm;
    } else {
      for (std::size_t e = 0; e < channels; ++e) grad_mean[e] = g[e] / 1e-12;
    }
    for (std::size_t e = 0; e < channels; ++e) {
      double* plane = grad_grid.data() + e * n;
      const double share = grad_mean[e] * inv;
      pg.for_each_voxel(p, [&](std::size_t v) { plane[v] += share; });
    }
  }
  return grad_grid;
}

std::vector<int> patch_labels(std::span<const std::int32_t> mask, Dims3 spatial, int k,
                              int num_classes, double threshold) {
  const PatchGrid pg(spatial, k);
  if (mask.size() != spatial.count()) throw ContractError("patch_labels: mask size mismatch");
  if (num_classes < 2) throw ParameterError("patch_labels: need at least two classes");
  std::vector<int> out(pg.patch_count(), 0);
  std::vector<std::size_t> votes(static_cast<std::size_t>(num_classes));
  for (std::size_t p = 0; p < out.size(); ++p) {
    std::fill(votes.begin(), votes.end(), 0);
    pg.for_each_voxel(p, [&](std::size_t v) { ++votes[static_cast<std::size_t>(mask[v])]; });
    if (num_classes == 2) {
      const double fg = static_cast<double>(votes[1]) / static_cast<double>(pg.cell_volume());
      out[p] = fg > threshold ? 1 : 0;
    } else {
      out[p] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

std::vector<double> patch_entropy(std::span<const double> entropy, Dims3 spatial, int k,
                                  int num_classes, bool normalize) {
  auto means = patch_means(entropy, 1, spatial, k);
  if (normalize) {
    const double scale = 1.0 / std::log(static_cast<double>(num_classes));
    for (double& m : means) m *= scale;
  }
  return means;
}

SimilarityMatrix cross_similarity(const PatchEmbeddings& anchors, const PatchEmbeddings& candidates,
                                  double tau) {
  if (!(tau > 0.0)) throw ParameterError("similarity: temperature tau must be positive");
  if (anchors.dim != candidates.dim) throw ContractError("similarity: embedding dims differ");
  SimilarityMatrix s;
  s.rows = anchors.count();
  s.cols = candidates.count();
  s.tau = tau;
  s.cosine.resize(s.rows * s.cols);
  s.scores.resize(s.rows * s.cols);
  for (std::size_t i = 0; i < s.rows; ++i) {
    for (std::size_t j = 0; j < s.cols; ++j) {
      const double c = dot(anchors.row(i).data(), candidates.row(j).data(), anchors.dim);
      s.cosine[i * s.cols + j] = c;
      s.scores[i * s.cols + j] = c / tau;
    }
  }
  return s;
}

SimilarityMatrix similarity(const PatchEmbeddings& z, double tau) {
  return cross_similarity(z, z, tau);
}

double focal_positive(double cosine, double gamma, double anchor_entropy) {
  const double s = std::clamp(cosine, 0.0, 1.0);
  return std::pow(1.0 - s, gamma) * std::exp(anchor_entropy);
}

double focal_negative(double cosine, double gamma) {
  return std::pow(std::clamp(cosine, 0.0, 1.0), gamma);
}

FocalWeights focal_weights(const SimilarityMatrix& sim, double gamma,
                           std::span<const double> anchor_entropy) {
  if (!(gamma >= 0.0)) throw ParameterError("focal_weights: gamma must be >= 0");
  if (sim.rows != sim.cols) throw ContractError("focal_weights: expects a square matrix");
  if (anchor_entropy.size() != sim.rows)
    throw ContractError("focal_weights: one entropy per anchor required");
  FocalWeights w;
  w.gamma = gamma;
  w.count = sim.rows;
  w.f_pos.assign(sim.rows * sim.cols, 0.0);
  w.f_neg.assign(sim.rows * sim.cols, 0.0);
  for (std::size_t i = 0; i < sim.rows; ++i) {
    for (std::size_t j = 0; j < sim.cols; ++j) {
      if (i == j) continue;
      w.f_pos[i * sim.cols + j] = focal_positive(sim.cos(i, j), gamma, anchor_entropy[i]);
      w.f_neg[i * sim.cols + j] = focal_negative(sim.cos(i, j), gamma);
    }
  }
  return w;
}

HardNegativeSet topk_hard_negatives(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                                    int top_k) {
  if (top_k < 0) throw ParameterError("top-k must be >= 0");
  if (student.dim != teacher.dim) throw ContractError("hard negatives: embedding dims differ");
  if (student.patch_class.size() != student.count() || teacher.patch_class.size() != teacher.count())
    throw ContractError("hard negatives: patch classes missing");
  HardNegativeSet set;
  set.per_anchor.resize(student.count());
  std::vector<HardNegative> pool;
  for (std::size_t i = 0; i < student.count(); ++i) {
    pool.clear();
    for (std::size_t l = 0; l < teacher.count(); ++l) {
      if (teacher.patch_class[l] == student.patch_class[i]) continue;
      pool.push_back({l, dot(student.row(i).data(), teacher.row(l).data(), student.dim)});
    }
    const std::size_t keep = std::min(pool.size(), static_cast<std::size_t>(top_k));
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      [](const HardNegative& a, const HardNegative& b) {
                        return a.cosine > b.cosine || (a.cosine == b.cosine && a.index < b.index);
                      });
    set.per_anchor[i].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return set;
}

void FeclOptions::validate() const {
  if (!(tau > 0.0)) throw ParameterError("fecl: tau must be positive");
  if (!(gamma >= 0.0)) throw ParameterError("fecl: gamma must be >= 0");
  if (top_k < 0) throw ParameterError("fecl: top-k must be >= 0");
}

FeclPlan fecl_plan(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                   const FeclOptions& options, std::span<const double> anchor_entropy) {
  options.validate();
  const std::size_t patches = student.count();
  if (patches < 2) throw ContractError("fecl: need at least two patches");
  if (student.patch_class.size() != patches)
    throw ContractError("fecl: student patch classes missing");
  if (anchor_entropy.size() != patches)
    throw ContractError("fecl: one entropy value per anchor patch required");

  FeclPlan plan;
  plan.patches = patches;
  plan.dim = student.dim;
  plan.tau = options.tau;
  plan.positives.resize(patches);
  plan.negatives.resize(patches);
  plan.pair_weight.assign(patches * patches, 0.0);
  plan.hard = topk_hard_negatives(student, teacher, options.top_k);

  bool any_complete = false;
  for (std::size_t i = 0; i < patches; ++i) {
    const double* zi = student.row(i).data();
    for (std::size_t j = 0; j < patches; ++j) {
      if (j == i) continue;
      const double c = dot(zi, student.row(j).data(), student.dim);
      if (student.patch_class[j] == student.patch_class[i]) {
        plan.positives[i].push_back(j);
        plan.pair_weight[i * patches + j] = focal_positive(c, options.gamma, anchor_entropy[i]);
      } else {
        plan.negatives[i].push_back(j);
        plan.pair_weight[i * patches + j] = focal_negative(c, options.gamma);
      }
    }
    if (!plan.positives[i].empty()) {
      ++plan.contributing_anchors;
      if (!plan.negatives[i].empty()) any_complete = true;
    }
  }
  plan.degenerate = !any_complete;
  return plan;
}

FeclResult fecl_evaluate(const FeclPlan& plan, std::span<const double> student,
                         std::span<const double> teacher, bool with_grad) {
  const std::size_t patches = plan.patches;
  const std::size_t dim = plan.dim;
  if (student.size() != patches * dim) throw ContractError("fecl: student embedding size mismatch");
  if (dim == 0 || teacher.size() % dim != 0)
    throw ContractError("fecl: teacher embedding size mismatch");

  FeclResult r;
  r.degenerate = plan.degenerate;
  r.contributing_anchors = plan.contributing_anchors;
  if (with_grad) r.grad_student.assign(student.size(), 0.0);
  if (plan.degenerate) return r;

  const double inv_tau = 1.0 / plan.tau;
  const double inv_anchors = 1.0 / static_cast<double>(plan.contributing_anchors);
  std::vector<double> hard_exp;
  std::vector<double> neg_exp;
  double total = 0.0;

  for (std::size_t i = 0; i < patches; ++i) {
    const auto& pos = plan.positives[i];
    if (pos.empty()) continue;
    const double* zi = student.data() + i * dim;
    const double* w = plan.pair_weight.data() + i * patches;
    const auto& hard = plan.hard.per_anchor[i];

    // (1/|H|) Σ_l exp(S_il) over the frozen teacher selection.
    hard_exp.resize(hard.size());
    double hard_mean = 0.0;
    for (std::size_t h = 0; h < hard.size(); ++h) {
      hard_exp[h] = std::exp(dot(zi, teacher.data() + hard[h].index * dim, dim) * inv_tau);
      hard_mean += hard_exp[h];
    }
    if (!hard.empty()) hard_mean /= static_cast<double>(hard.size());

    const auto& neg = plan.negatives[i];
    neg_exp.resize(neg.size());
    double negative_mass = 0.0;  // Σ_q F_q^- [exp(S_iq) + hard_mean]
    double weight_mass = 0.0;    // Σ_q F_q^-
    for (std::size_t n = 0; n < neg.size(); ++n) {
      neg_exp[n] = std::exp(dot(zi, student.data() + neg[n] * dim, dim) * inv_tau);
      negative_mass += w[neg[n]] * (neg_exp[n] + hard_mean);
      weight_mass += w[neg[n]];
    }

    const double anchor_scale = 1.0 / static_cast<double>(pos.size());
    double anchor_loss = 0.0;
    double grad_mass = 0.0;  // ∂L/∂(negative_mass)
    const double step = inv_anchors * anchor_scale;
    for (std::size_t k : pos) {
      const double* zk = student.data() + k * dim;
      const double s = dot(zi, zk, dim) * inv_tau;
      // -log(exp(s) / (exp(s) + G)) = log1p(G exp(-s))
      anchor_loss += w[k] * std::log1p(negative_mass * std::exp(-s));
      if (!with_grad) continue;
      const double es = std::exp(s);
      const double denom = es + negative_mass;
      const double d_s = step * w[k] * (es / denom - 1.0);
      grad_mass += step * w[k] / denom;
      double* gi = r.grad_student.data() + i * dim;
      double* gk = r.grad_student.data() + k * dim;
      for (std::size_t e = 0; e < dim; ++e) {
        gi[e] += d_s * zk[e] * inv_tau;
        gk[e] += d_s * zi[e] * inv_tau;
      }
    }
    total += anchor_loss * anchor_scale;

    if (!with_grad || grad_mass == 0.0) continue;
    double* gi = r.grad_student.data() + i * dim;
    for (std::size_t n = 0; n < neg.size(); ++n) {
      const double* zq = student.data() + neg[n] * dim;
      const double d_s = grad_mass * w[neg[n]] * neg_exp[n];
      double* gq = r.grad_student.data() + neg[n] * dim;
      for (std::size_t e = 0; e < dim; ++e) {
        gi[e] += d_s * zq[e] * inv_tau;
        gq[e] += d_s * zi[e] * inv_tau;
      }
    }
    for (std::size_t h = 0; h < hard.size(); ++h) {
      const double* zl = teacher.data() + hard[h].index * dim;
      const double d_s = grad_mass * weight_mass * hard_exp[h] / static_cast<double>(hard.size());
      for (std::size_t e = 0; e < dim; ++e) gi[e] += d_s * zl[e] * inv_tau;
    }
  }
  r.loss = total * inv_anchors;
  return r;
}

FeclResult fecl_forward(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                        const FeclOptions& options, std::span<const double> anchor_entropy) {
  const auto plan = fecl_plan(student, teacher, options, anchor_entropy);
  return fecl_evaluate(plan, student.vectors, teacher.vectors, false);
}

FeclResult fecl_grad(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                     const FeclOptions& options, std::span<const double> anchor_entropy) {
  const auto plan = fecl_plan(student, teacher, options, anchor_entropy);
  return fecl_evaluate(plan, student.vectors, teacher.vectors, true);
}

}  // namespace dycon
