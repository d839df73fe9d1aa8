#include <doctest.h>

#include <cmath>

#include "dycon/error.hpp"
#include "dycon/gradcheck.hpp"
#include "dycon/supervised_losses.hpp"
#include "test_util.hpp"

using namespace dycon;

namespace {

const Dims3 k16{2, 2, 4};

std::vector<std::int32_t> labels_from(const std::vector<double>& fg) {
  std::vector<std::int32_t> y(fg.size());
  for (std::size_t i = 0; i < fg.size(); ++i) y[i] = fg[i] > 0.5 ? 1 : 0;
  return y;
}

}  // namespace

TEST_CASE("dice loss reference values") {
  std::vector<double> truth(16, 0.0);
  for (int i = 0; i < 8; ++i) truth[i] = 1.0;
  const LabelField y(1, k16, labels_from(truth), 2);

  CHECK(std::abs(dice_loss(testutil::binary_field(truth, 1, k16), y).loss) < 1e-6);

  std::vector<double> inverse(16);
  for (int i = 0; i < 16; ++i) inverse[i] = 1.0 - truth[i];
  CHECK(dice_loss(testutil::binary_field(inverse, 1, k16), y).loss ==
        doctest::Approx(1.0).epsilon(1e-6));

  // 8 predicted, 8 true, 4 overlapping.
  std::vector<double> pred(16, 0.0);
  for (int i = 4; i < 12; ++i) pred[i] = 1.0;
  const double s = kDiceSmoothing;
  CHECK(dice_loss(testutil::binary_field(pred, 1, k16), y).loss ==
        doctest::Approx(1.0 - (8.0 + s) / (16.0 + s)).epsilon(1e-12));
  CHECK(std::abs(dice_loss(testutil::binary_field(pred, 1, k16), y).loss - 0.5) < 1e-6);
}

TEST_CASE("cross entropy reference values") {
  std::vector<double> truth(16, 0.0);
  for (int i = 0; i < 5; ++i) truth[i] = 1.0;
  const LabelField y(1, k16, labels_from(truth), 2);
  CHECK(ce_loss(testutil::binary_field(truth, 1, k16), y).loss < 1e-6);
  CHECK(ce_loss(ProbabilityField::uniform({1, 2, k16}), y).loss ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("supervised gradients match finite differences") {
  const auto suite = check_supervised(99);
  CHECK(suite.probes > 0);
  CHECK(suite.max_relative_error < 1e-6);
}

TEST_CASE("supervised loss sums dice and ce") {
  std::mt19937_64 rng(12);
  const Shape shape{2, 2, {2, 3, 2}};
  const auto p = testutil::random_field(rng, shape);
  std::vector<std::int32_t> lab(shape.voxel_count());
  for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<std::int32_t>(i % 3 == 0);
  const LabelField y(2, shape.spatial, lab, 2);
  const auto all = supervised_loss(p.data(), shape, y);
  const auto d = dice_loss(p, y);
  const auto c = ce_loss(p, y);
  CHECK(all.dice_loss == d.loss);
  CHECK(all.ce_loss == c.loss);
  for (std::size_t i = 0; i < all.grad_ps.size(); ++i)
    CHECK(all.grad_ps[i] == doctest::Approx(d.grad[i] + c.grad[i]).epsilon(1e-14));
  CHECK(d.loss >= 0.0);
  CHECK(d.loss <= 1.0);
  CHECK(c.loss >= 0.0);
}

TEST_CASE("dice reads only the foreground channel") {
  std::mt19937_64 rng(3);
  const Shape shape{1, 2, k16};
  const auto p = testutil::random_field(rng, shape);
  std::vector<std::int32_t> lab(16);
  for (std::size_t i = 0; i < 16; ++i) lab[i] = static_cast<std::int32_t>(i % 4 == 1);
  const LabelField y(1, k16, lab, 2);
  std::vector<double> scrambled(p.data().begin(), p.data().end());
  for (std::size_t i = 0; i < 16; ++i) scrambled[i] = 0.25 * static_cast<double>(i % 3);
  const auto a = dice_loss(p, y);
  const auto b = dice_loss(scrambled, shape, y);
  CHECK(a.loss == b.loss);
  for (std::size_t i = 0; i < 16; ++i) CHECK(b.grad[i] == 0.0);
}

TEST_CASE("supervised argument checks") {
  const auto p = ProbabilityField::uniform({1, 2, k16});
  const LabelField wrong(1, {2, 2, 2}, std::vector<std::int32_t>(8, 0), 2);
  CHECK_THROWS_AS(dice_loss(p, wrong), ContractError);
  CHECK_THROWS_AS(ce_loss(p, wrong), ContractError);
}
