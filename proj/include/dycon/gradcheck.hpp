#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dycon {

// Central differences with step h; relative error
//   |a - f| / max(|a|, |f|, floor)
// so components that are numerically zero are compared absolutely.
inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdRelativeFloor = 1e-3;

double relative_error(double analytic, double numeric, double floor = kFdRelativeFloor);

struct GradcheckSuite {
  std::string name;
  std::size_t probes = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;

  [[nodiscard]] bool passed() const { return max_relative_error < tolerance; }
};

// 100 random (p_s, p_t, β) triples, probabilities at least 1e-3 from 0 and 1.
GradcheckSuite check_uncl(std::uint64_t seed, int draws = 100);
// Dice and cross-entropy on random fields.
GradcheckSuite check_supervised(std::uint64_t seed, int draws = 20);
// Random 6-patch instances with the plan (weights, pairs, selection) frozen.
GradcheckSuite check_fecl(std::uint64_t seed, int draws = 20);
// Composite loss through the network on a 4^3 volume, every parameter.
GradcheckSuite check_composite(std::uint64_t seed);

std::vector<GradcheckSuite> run_gradcheck(std::uint64_t seed);

}  // namespace dycon
