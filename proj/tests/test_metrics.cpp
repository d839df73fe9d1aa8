#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dycon/error.hpp"
#include "dycon/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dycon;
using namespace oracle;

namespace {

Mask dilate(const Mask& m, Dims3 s) {
  Mask out = m;
  for (std::size_t i = 0; i < s.h; ++i)
    for (std::size_t j = 0; j < s.w; ++j)
      for (std::size_t k = 0; k < s.d; ++k) {
        if (!m[s.index(i, j, k)]) continue;
        if (i > 0) out[s.index(i - 1, j, k)] = 1;
        if (i + 1 < s.h) out[s.index(i + 1, j, k)] = 1;
        if (j > 0) out[s.index(i, j - 1, k)] = 1;
        if (j + 1 < s.w) out[s.index(i, j + 1, k)] = 1;
        if (k > 0) out[s.index(i, j, k - 1)] = 1;
        if (k + 1 < s.d) out[s.index(i, j, k + 1)] = 1;
      }
  return out;
}

}  // namespace

TEST_CASE("dice and IoU reference values") {
  Mask a(16, 0), b(16, 0);
  for (int i = 0; i < 8; ++i) a[i] = 1;
  CHECK(dice_iou(a, a).dice == 1.0);
  CHECK(dice_iou(a, a).iou == 1.0);
  for (int i = 8; i < 16; ++i) b[i] = 1;
  CHECK(dice_iou(a, b).dice == 0.0);
  CHECK(dice_iou(a, b).iou == 0.0);
  std::fill(b.begin(), b.end(), 0);
  for (int i = 4; i < 12; ++i) b[i] = 1;
  CHECK(dice_iou(a, b).dice == doctest::Approx(0.5));
  CHECK(dice_iou(a, b).iou == doctest::Approx(4.0 / 12.0));
  const Mask empty(16, 0);
  CHECK(dice_iou(empty, empty).dice == 1.0);
  CHECK(dice_iou(empty, empty).iou == 1.0);
  CHECK_THROWS_AS(dice_iou(a, Mask(15, 0)), ContractError);
}

TEST_CASE("dice is never below IoU") {
  std::mt19937_64 rng(1);
  const Dims3 s{6, 6, 6};
  for (int t = 0; t < 50; ++t) {
    const auto a = random_mask(rng, s);
    const auto b = random_mask(rng, s);
    const auto r = dice_iou(a, b);
    CHECK(r.dice >= r.iou);
    CHECK(r.dice <= 1.0);
    CHECK(r.iou >= 0.0);
  }
}

TEST_CASE("identical masks have zero surface distance") {
  std::mt19937_64 rng(2);
  const Dims3 s{8, 8, 8};
  const auto a = random_mask(rng, s);
  const auto r = surface_distances(a, a, s);
  CHECK(r.hd95 == 0.0);
  CHECK(r.asd == 0.0);
  CHECK_FALSE(r.collapsed);
}

TEST_CASE("two single voxels five apart") {
  const Dims3 s{6, 6, 2};
  Mask a(s.count(), 0), b(s.count(), 0);
  a[s.index(0, 0, 0)] = 1;
  b[s.index(3, 4, 0)] = 1;
  const auto r = surface_distances(a, b, s);
  CHECK(r.hd95 == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(r.asd == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("one-voxel dilation keeps the average surface distance within 1") {
  std::mt19937_64 rng(3);
  const Dims3 s{10, 10, 10};
  for (int t = 0; t < 20; ++t) {
    const auto a = random_mask(rng, s);
    const auto r = surface_distances(a, dilate(a, s), s);
    CHECK(r.asd <= 1.0 + 1e-12);
  }
}

TEST_CASE("surface distances are symmetric") {
  std::mt19937_64 rng(4);
  const Dims3 s{7, 9, 8};
  for (int t = 0; t < 30; ++t) {
    const auto a = random_mask(rng, s);
    const auto b = random_mask(rng, s);
    const auto ab = surface_distances(a, b, s);
    const auto ba = surface_distances(b, a, s);
    CHECK(ab.hd95 == ba.hd95);
    CHECK(ab.asd == ba.asd);
  }
}

TEST_CASE("surface extraction and distances match the exhaustive search") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 40; ++t) {
    const Dims3 s{4 + rng() % 13, 4 + rng() % 13, 4 + rng() % 13};
    const auto a = random_mask(rng, s);
    const auto b = random_mask(rng, s);
    CHECK(surface_voxels(a, s) == brute_surface(a, s));
    const auto fast = surface_distances(a, b, s);
    const auto slow = brute_scores(a, b, s);
    CHECK(fast.hd95 == slow.hd95);
    CHECK(fast.asd == slow.asd);
  }
}

TEST_CASE("distance transform matches brute force") {
  std::mt19937_64 rng(6);
  const Dims3 s{7, 5, 9};
  std::vector<std::uint8_t> marked(s.count(), 0);
  for (int n = 0; n < 6; ++n) marked[rng() % s.count()] = 1;
  const auto dt = squared_distance_transform(marked, s);
  for (std::size_t v = 0; v < s.count(); ++v) {
    double cv[3];
    coords(v, s, cv);
    std::int64_t best = -1;
    for (std::size_t u = 0; u < s.count(); ++u) {
      if (!marked[u]) continue;
      double cu[3];
      coords(u, s, cu);
      std::int64_t r = 0;
      for (int t = 0; t < 3; ++t)
        r += static_cast<std::int64_t>((cv[t] - cu[t]) * (cv[t] - cu[t]));
      if (best < 0 || r < best) best = r;
    }
    CHECK(dt[v] == best);
  }
  const std::vector<std::uint8_t> none(s.count(), 0);
  for (auto d : squared_distance_transform(none, s)) CHECK(d == -1);
}

TEST_CASE("empty prediction yields the diagonal sentinel") {
  const Dims3 s{4, 6, 12};
  Mask a(s.count(), 0), empty(s.count(), 0);
  a[5] = 1;
  const double diag = std::sqrt(16.0 + 36.0 + 144.0);
  for (const auto& r : {surface_distances(empty, a, s), surface_distances(a, empty, s)}) {
    CHECK(r.collapsed);
    CHECK(r.hd95 == doctest::Approx(diag));
    CHECK(r.asd == doctest::Approx(diag));
  }
  const auto m = evaluate_masks(empty, a, s);
  CHECK(m.collapsed);
  CHECK(m.dice == 0.0);
}

TEST_CASE("percentile interpolation") {
  const std::vector<double> v{0, 1, 2, 3, 4};
  CHECK(sorted_percentile(v, 0.0) == 0.0);
  CHECK(sorted_percentile(v, 1.0) == 4.0);
  CHECK(sorted_percentile(v, 0.95) == doctest::Approx(3.8));
  CHECK(sorted_percentile(std::vector<double>{7.0}, 0.95) == 7.0);
}

TEST_CASE("report aggregation and CSV") {
  VolumeMetrics a{"v0", "small", "scattered", 0.5, 0.25, 2.0, 1.0, false};
  VolumeMetrics b{"v1", "large", "non-scattered", 1.0, 1.0, 0.0, 0.0, false};
  const auto r = MetricReport::from({a, b});
  CHECK(r.mean.dice == doctest::Approx(0.75));
  CHECK(r.mean.iou == doctest::Approx(0.625));
  CHECK(r.mean.hd95 == doctest::Approx(1.0));
  CHECK(r.mean.asd == doctest::Approx(0.5));
  testutil::TempDir dir("report");
  write_report_csv(r, dir / "r.csv");
  const auto text = testutil::slurp(dir / "r.csv");
  CHECK(text.rfind("volume_id,category,scatter,dice,iou,hd95,asd\n", 0) == 0);
  CHECK(text.find("v0,small,scattered,") != std::string::npos);
}
