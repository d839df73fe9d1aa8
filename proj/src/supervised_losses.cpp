#include "dycon/supervised_losses.hpp"

#include <cmath>

#include "dycon/error.hpp"
#include "dycon/uncertainty.hpp"

namespace dycon {

namespace {

void check(std::span<const double> p, const Shape& shape, const LabelField& y) {
  if (p.size() != shape.size()) throw ContractError("supervised loss: probability size mismatch");
  if (y.batch() != shape.batch || !(y.spatial() == shape.spatial))
    throw ContractError("supervised loss: label shape does not match prediction");
  if (static_cast<std::size_t>(y.num_classes()) > shape.channels)
    throw ContractError("supervised loss: labels use more classes than predicted");
}

}  // namespace

LossAndGrad dice_loss(std::span<const double> p, const Shape& shape, const LabelField& y) {
  check(p, shape, y);
  if (shape.channels < 2) throw ContractError("dice_loss: needs a foreground channel");
  const std::size_t n = shape.voxels_per_item();
  const auto labels = y.data();

  double inter = 0.0, pred = 0.0, truth = 0.0;
  for (std::size_t b = 0; b < shape.batch; ++b) {
    const double* fg = p.data() + (b * shape.channels + 1) * n;
    for (std::size_t v = 0; v < n; ++v) {
      const double t = labels[b * n + v] == 1 ? 1.0 : 0.0;
      inter += fg[v] * t;
      pred += fg[v];
      truth += t;
    }
  }
  const double num = 2.0 * inter + kDiceSmoothing;
  const double den = pred + truth + kDiceSmoothing;

  LossAndGrad r;
  r.loss = 1.0 - num / den;
  r.grad.assign(p.size(), 0.0);
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t b = 0; b < shape.batch; ++b) {
    double* g = r.grad.data() + (b * shape.channels + 1) * n;
    for (std::size_t v = 0; v < n; ++v) {
      const double t = labels[b * n + v] == 1 ? 1.0 : 0.0;
      g[v] = -(2.0 * t * den - num) * inv_den2;
    }
  }
  return r;
}

LossAndGrad ce_loss(std::span<const double> p, const Shape& shape, const LabelField& y) {
  check(p, shape, y);
  const std::size_t n = shape.voxels_per_item();
  const double inv_n = 1.0 / static_cast<double>(shape.voxel_count());
  const auto labels = y.data();

  LossAndGrad r;
  r.grad.assign(p.size(), 0.0);
  double sum = 0.0;
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t v = 0; v < n; ++v) {
      const auto c = static_cast<std::size_t>(labels[b * n + v]);
      const std::size_t idx = (b * shape.channels + c) * n + v;
      const double q = p[idx];
      sum -= std::log(clamp_prob(q));
      if (q > kProbEpsilon && q < 1.0 - kProbEpsilon) r.grad[idx] = -inv_n / q;
    }
  }
  r.loss = sum * inv_n;
  return r;
}

SupLossResult supervised_loss(std::span<const double> p, const Shape& shape, const LabelField& y) {
  auto dice = dice_loss(p, shape, y);
  auto ce = ce_loss(p, shape, y);
  SupLossResult r;
  r.dice_loss = dice.loss;
  r.ce_loss = ce.loss;
  r.grad_ps = std::move(dice.grad);
  for (std::size_t i = 0; i < r.grad_ps.size(); ++i) r.grad_ps[i] += ce.grad[i];
  return r;
}

}  // namespace dycon
