#include "dycon/uncl.hpp"

#include <algorithm>
#include <cmath>

#include "dycon/error.hpp"
#include "dycon/uncertainty.hpp"

namespace dycon {

void BetaSchedule::validate() const {
  if (!(beta_min > 0.0) || !(beta_min <= beta_max))
    throw ParameterError("beta schedule requires 0 < beta_min <= beta_max");
  if (!(decay >= 0.0)) throw ParameterError("beta schedule decay must be >= 0");
  if (total_epochs < 1) throw ParameterError("beta schedule total_epochs must be >= 1");
  if (mode == BetaMode::fixed && !(fixed_value >= 0.0))
    throw ParameterError("fixed beta must be >= 0");
}

double beta_at(const BetaSchedule& schedule, int epoch) {
  schedule.validate();
  if (epoch < 0 || epoch > schedule.total_epochs)
    throw ParameterError("beta_at: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(schedule.total_epochs) + "]");
  switch (schedule.mode) {
    case BetaMode::none:
      return 0.0;
    case BetaMode::fixed:
      return schedule.fixed_value;
    case BetaMode::adaptive:
      return std::max(schedule.beta_min,
                      schedule.beta_max * std::exp(-schedule.decay * static_cast<double>(epoch) /
                                                   static_cast<double>(schedule.total_epochs)));
  }
  return 0.0;
}

std::string to_string(BetaMode mode) {
  switch (mode) {
    case BetaMode::none: return "none";
    case BetaMode::fixed: return "fixed";
    case BetaMode::adaptive: return "adaptive";
  }
  return "?";
}

BetaMode parse_beta_mode(std::string_view name) {
  if (name == "none") return BetaMode::none;
  if (name == "fixed") return BetaMode::fixed;
  if (name == "adaptive") return BetaMode::adaptive;
  throw ParameterError("unknown beta mode '" + std::string(name) + "'");
}

std::string to_string(EntropyMode mode) {
  switch (mode) {
    case EntropyMode::dual: return "dual";
    case EntropyMode::student_only: return "student_only";
    case EntropyMode::teacher_only: return "teacher_only";
  }
  return "?";
}

EntropyMode parse_entropy_mode(std::string_view name) {
  if (name == "dual") return EntropyMode::dual;
  if (name == "student_only") return EntropyMode::student_only;
  if (name == "teacher_only") return EntropyMode::teacher_only;
  throw ParameterError("unknown entropy mode '" + std::string(name) + "'");
}

UnclResult uncl_evaluate(std::span<const double> ps, std::span<const double> pt, const Shape& shape,
                         double beta, EntropyMode mode, bool with_grad) {
  if (ps.size() != shape.size() || pt.size() != shape.size())
    throw ContractError("uncl: student and teacher fields must share one shape");
  if (!(beta >= 0.0)) throw ParameterError("uncl: beta must be >= 0");

  const bool use_hs = mode != EntropyMode::teacher_only;
  const bool use_ht = mode != EntropyMode::student_only;
  const std::size_t n = shape.voxels_per_item();
  const std::size_t classes = shape.channels;
  const double inv_n = 1.0 / static_cast<double>(shape.voxel_count());

  UnclResult r;
  r.per_voxel_consistency.resize(shape.voxel_count());
  r.per_voxel_entropy.resize(shape.voxel_count());
  if (with_grad) r.grad_ps.assign(ps.size(), 0.0);

  double consistency_sum = 0.0;
  double entropy_sum = 0.0;
  for (std::size_t b = 0; b < shape.batch; ++b) {
    const std::size_t base = b * classes * n;
    for (std::size_t v = 0; v < n; ++v) {
      const double hs = use_hs ? voxel_entropy(ps.data() + base + v, classes, n) : 0.0;
      const double ht = use_ht ? voxel_entropy(pt.data() + base + v, classes, n) : 0.0;
      const double es = std::exp(beta * hs);
      const double denom = es + std::exp(beta * ht);
      double sq = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double diff = ps[base + c * n + v] - pt[base + c * n + v];
        sq += diff * diff;
      }
      const double term = sq / denom;
      r.per_voxel_consistency[b * n + v] = term;
      r.per_voxel_entropy[b * n + v] = hs + ht;
      consistency_sum += term;
      entropy_sum += hs + ht;

      if (!with_grad) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t idx = base + c * n + v;
        const double diff = ps[idx] - pt[idx];
        // ∂H_s/∂p_c = -(ln p_c + 1) inside the clamp band, 0 where the clamp is active.
        double dhs = 0.0;
        if (use_hs && ps[idx] > kProbEpsilon && ps[idx] < 1.0 - kProbEpsilon)
          dhs = -(std::log(ps[idx]) + 1.0);
        const double alignment = 2.0 * diff / denom;
        const double damping = beta * sq * es * dhs / (denom * denom);
        const double regulariser = beta * dhs;
        r.grad_ps[idx] = inv_n * (alignment - damping + regulariser);
      }
    }
  }
  r.loss = inv_n * consistency_sum + beta * inv_n * entropy_sum;
  return r;
}

double uncl_forward(const ProbabilityField& ps, const ProbabilityField& pt, double beta,
                    EntropyMode mode) {
  if (!(ps.shape() == pt.shape())) throw ContractError("uncl: shape mismatch");
  return uncl_evaluate(ps.data(), pt.data(), ps.shape(), beta, mode, false).loss;
}

std::vector<double> uncl_grad(const ProbabilityField& ps, const ProbabilityField& pt, double beta,
                              EntropyMode mode) {
  return uncl(ps, pt, beta, mode).grad_ps;
}

UnclResult uncl(const ProbabilityField& ps, const ProbabilityField& pt, double beta,
                EntropyMode mode) {
  if (!(ps.shape() == pt.shape())) throw ContractError("uncl: shape mismatch");
  return uncl_evaluate(ps.data(), pt.data(), ps.shape(), beta, mode, true);
}

ConsistencyResult mse_consistency(std::span<const double> ps, std::span<const double> pt,
                                  const Shape& shape) {
  if (ps.size() != shape.size() || pt.size() != shape.size())
    throw ContractError("mse_consistency: shape mismatch");
  const std::size_t n = shape.voxels_per_item();
  const double inv_n = 1.0 / static_cast<double>(shape.voxel_count());
  ConsistencyResult r;
  r.grad_ps.resize(ps.size());
  double sum = 0.0;
  for (std::size_t b = 0; b < shape.batch; ++b) {
    const std::size_t base = b * shape.channels * n;
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const std::size_t idx = base + c * n + v;
        const double diff = ps[idx] - pt[idx];
        sum += diff * diff;
        r.grad_ps[idx] = 2.0 * diff * inv_n;
      }
    }
  }
  r.loss = sum * inv_n;
  return r;
}

}  // namespace dycon
