#pragma once

// Self-checks behind `spwc check`: regularizer conditions, closed-form weights
// against brute-force minimization, and analytic gradients against central
// finite differences.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spwc/self_paced.hpp"

namespace spwc {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// argmin over v in {0, step, 2 step, ..., 1} of weight_objective(v, eta, mu).
double grid_argmin_weight(double eta, double mu, double step);

CheckResult check_regularizer_conditions(RegularizerKind kind);

/// `trials` random (eta, mu) in (0,5]^2; closed form within 1e-3 of the grid argmin (step 1e-4).
CheckResult check_closed_form(std::size_t trials, std::uint64_t seed);

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||),
/// maximized over instances; thresholds 1e-4 (ce) and 1e-6 (penalty).
CheckResult check_ce_gradient(std::size_t instances, std::uint64_t seed);
CheckResult check_penalty_gradient(std::size_t instances, std::uint64_t seed);

std::vector<CheckResult> run_checks(std::uint64_t seed = 20240601);

}  // namespace spwc
