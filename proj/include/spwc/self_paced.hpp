#pragma once

// Task-level self-paced weighting.
//
// A past task's difficulty is eta = -psi * ln(1 - psi) where psi is the
// current model's accuracy on it. Each past task gets a priority weight
// v in [0,1] minimizing  v * eta + (self-paced term), solved in closed form.
// Note that eta grows with psi: well-remembered tasks get small weights.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace spwc {

inline constexpr double kPsiClamp = 1.0 - 1e-12;

/// -psi * ln(1 - psi), natural log, psi clamped to <= 1 - 1e-12.
double difficulty(double psi);

/// Closed-form minimizer of v*eta + mu*(v^3/3 - v) over [0,1]:
/// sqrt(1 - eta/mu) when eta < mu, else 0.
double proposed_weight(double eta, double mu);

/// v*eta + mu*(v^3/3 - v), the per-task objective whose argmin is proposed_weight.
double weight_objective(double v, double eta, double mu);

enum class RegularizerKind { proposed, hard, linear, logarithmic };

std::string to_string(RegularizerKind kind);
RegularizerKind parse_regularizer(const std::string& text);

/// The self-paced term of the objective for weights `v` and age `mu`:
///   proposed     mu * (||v||^3 / 3 - sum v)
///   hard         -mu * sum v
///   linear       mu/2 * sum (v^2 - 2v)
///   logarithmic  sum (zeta v - zeta^v / ln zeta),  zeta = 1 - mu, 0 < mu < 1
/// For the proposed kind the norm is over the whole vector, so the term
/// couples tasks only through ||v||; with one entry it reduces to the
/// per-task form used by weight_objective.
double regularizer_value(std::span<const double> v, RegularizerKind kind, double mu);

/// True when the logarithmic kind cannot be used with this mu and falls back to linear.
bool logarithmic_falls_back(double mu);

/// Closed-form weight for any kind, always in [0,1]:
///   hard         1 if eta < mu else 0
///   linear       max(0, 1 - eta/mu)
///   logarithmic  ln(eta + zeta) / ln(zeta) clipped to [0,1]; linear when mu >= 1
double variant_weight(double eta, double mu, RegularizerKind kind);

/// How the age parameter mu is chosen for an incoming task.
struct MuPolicy {
  enum class Kind { fixed, topk, quantile };
  Kind kind = Kind::topk;
  /// fixed: mu itself. topk: k (0 = ceil(past/2)). quantile: rho in [0,1].
  double value = 0.0;

  static MuPolicy fixed(double mu) { return {Kind::fixed, mu}; }
  static MuPolicy topk(std::size_t k) { return {Kind::topk, static_cast<double>(k)}; }
  static MuPolicy quantile(double rho) { return {Kind::quantile, rho}; }
};

std::string to_string(const MuPolicy& policy);
/// Parses "fixed:<mu>", "topk:<k>", "topk:auto", "quantile:<rho>".
MuPolicy parse_mu_policy(const std::string& text);

/// Resolves mu against the past tasks' difficulties.
///   fixed     mu = value
///   topk      mu = (k-th smallest eta) * (1 + 1e-9), so exactly min(k, n)
///             tasks satisfy eta < mu when the etas are distinct
///   quantile  mu = linearly interpolated rho-quantile of the etas
/// A nonpositive result is raised to the smallest positive double.
double resolve_mu(std::span<const double> etas, const MuPolicy& policy);

struct PriorityWeights {
  std::vector<double> v;    // one per past task
  std::vector<double> eta;  // difficulty per past task
  double mu = 0.0;          // resolved age parameter
  std::vector<std::string> warnings;

  std::size_t positive_count() const;
};

/// Difficulties, resolved mu and per-task weights for the given accuracies.
PriorityWeights weight_vector(std::span<const double> psis, const MuPolicy& policy,
                              RegularizerKind kind);

struct ConditionFailure {
  std::string condition;
  std::string witness;
};

struct ConditionReport {
  std::vector<ConditionFailure> failures;
  std::size_t evaluations = 0;
  bool passed() const { return failures.empty(); }
};

struct ConditionOptions {
  std::size_t trials = 100;       // random mu values for the convexity sweep
  std::size_t grid = 1000;        // points per axis of the (eta, mu) grid
  double grid_max = 5.0;          // grid covers (0, grid_max]^2
  double convexity_tol = 1e-9;
  double monotone_tol = 1e-12;
  std::uint64_t seed = 7;
};

/// Numerically checks the self-paced regularizer conditions for `kind`:
/// convexity of the per-task term in v on [0,1]; v* nonincreasing in eta and
/// nondecreasing in mu on a dense grid; and the limits v*(0,mu) = 1,
/// v*(eta -> inf, mu) = 0, v*(eta, mu -> 0) = 0, v*(eta, mu -> inf) <= 1.
/// The logarithmic kind is swept over mu in (0,1), where it is defined.
ConditionReport regularizer_conditions_check(RegularizerKind kind, const ConditionOptions& options = {});

}  // namespace spwc
