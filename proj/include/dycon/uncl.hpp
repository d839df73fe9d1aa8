#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

enum class BetaMode { none, fixed, adaptive };

// β(t) = max(β_min, β_max · exp(-λ t / T)) in adaptive mode.
struct BetaSchedule {
  BetaMode mode = BetaMode::adaptive;
  double beta_max = 1.0;
  double beta_min = 0.1;
  double decay = 0.1;  // λ
  int total_epochs = 1;
  double fixed_value = 0.0;

  void validate() const;
};

// Mode none returns 0, which disables entropy weighting and the regulariser.
double beta_at(const BetaSchedule& schedule, int epoch);

std::string to_string(BetaMode mode);
BetaMode parse_beta_mode(std::string_view name);

// Which entropies enter the denominator and the regulariser.
enum class EntropyMode { dual, student_only, teacher_only };

std::string to_string(EntropyMode mode);
EntropyMode parse_entropy_mode(std::string_view name);

struct UnclResult {
  double loss = 0.0;
  std::vector<double> grad_ps;                 // same layout as p_s
  std::vector<double> per_voxel_consistency;   // ‖p_s − p_t‖² / (e^{βH_s} + e^{βH_t})
  std::vector<double> per_voxel_entropy;       // H_s + H_t as used by the active mode
};

// Raw-array core. `ps` and `pt` share `shape`; values need not lie on the
// simplex (finite-difference probes step off it).
UnclResult uncl_evaluate(std::span<const double> ps, std::span<const double> pt, const Shape& shape,
                         double beta, EntropyMode mode = EntropyMode::dual, bool with_grad = true);

double uncl_forward(const ProbabilityField& ps, const ProbabilityField& pt, double beta,
                    EntropyMode mode = EntropyMode::dual);
std::vector<double> uncl_grad(const ProbabilityField& ps, const ProbabilityField& pt, double beta,
                              EntropyMode mode = EntropyMode::dual);
UnclResult uncl(const ProbabilityField& ps, const ProbabilityField& pt, double beta,
                EntropyMode mode = EntropyMode::dual);

// Plain mean-teacher consistency: mean over voxels of ‖p_s − p_t‖².
struct ConsistencyResult {
  double loss = 0.0;
  std::vector<double> grad_ps;
};
ConsistencyResult mse_consistency(std::span<const double> ps, std::span<const double> pt,
                                  const Shape& shape);

}  // namespace dycon
