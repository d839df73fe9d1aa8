#pragma once

#include <span>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

inline constexpr double kDiceSmoothing = 1e-5;

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // layout of the probability input
};

// Soft Dice on the foreground channel (index 1), pooled over the batch.
LossAndGrad dice_loss(std::span<const double> p, const Shape& shape, const LabelField& y);
// Mean over voxels of -ln p_y with clamped logs.
LossAndGrad ce_loss(std::span<const double> p, const Shape& shape, const LabelField& y);

inline LossAndGrad dice_loss(const ProbabilityField& p, const LabelField& y) {
  return dice_loss(p.data(), p.shape(), y);
}
inline LossAndGrad ce_loss(const ProbabilityField& p, const LabelField& y) {
  return ce_loss(p.data(), p.shape(), y);
}

struct SupLossResult {
  double dice_loss = 0.0;
  double ce_loss = 0.0;
  std::vector<double> grad_ps;  // gradient of dice + ce
};

SupLossResult supervised_loss(std::span<const double> p, const Shape& shape, const LabelField& y);

}  // namespace dycon
