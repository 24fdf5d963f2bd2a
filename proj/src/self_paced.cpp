#include "spwc/self_paced.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "spwc/errors.hpp"
#include "spwc/rng.hpp"

namespace spwc {
namespace {

void check_mu(double mu, const char* who) {
  if (!(mu > 0.0) || !std::isfinite(mu)) {
    throw UsageError(std::string(who) + ": mu must be positive and finite");
  }
}

void check_eta(double eta, const char* who) {
  if (!(eta >= 0.0)) throw UsageError(std::string(who) + ": eta must be nonnegative");
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::string shortest(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

std::string witness(double eta, double mu, double v) {
  std::ostringstream os;
  os.precision(17);
  os << "eta=" << eta << " mu=" << mu << " v=" << v;
  return os.str();
}

}  // namespace

double difficulty(double psi) {
  if (!(psi >= 0.0 && psi <= 1.0)) throw UsageError("difficulty: psi outside [0,1]");
  const double p = std::min(psi, kPsiClamp);
  return p * -std::log1p(-p);
}

double proposed_weight(double eta, double mu) {
  check_mu(mu, "proposed_weight");
  check_eta(eta, "proposed_weight");
  return eta < mu ? std::sqrt(1.0 - eta / mu) : 0.0;
}

double weight_objective(double v, double eta, double mu) {
  return v * eta + mu * (v * v * v / 3.0 - v);
}

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::proposed: return "proposed";
    case RegularizerKind::hard: return "hard";
    case RegularizerKind::linear: return "linear";
    case RegularizerKind::logarithmic: return "logarithmic";
  }
  return "?";
}

RegularizerKind parse_regularizer(const std::string& text) {
  if (text == "proposed") return RegularizerKind::proposed;
  if (text == "hard") return RegularizerKind::hard;
  if (text == "linear") return RegularizerKind::linear;
  if (text == "logarithmic") return RegularizerKind::logarithmic;
  throw UsageError("unknown regularizer kind '" + text + "'");
}

bool logarithmic_falls_back(double mu) { return !(mu > 0.0 && mu < 1.0); }

double regularizer_value(std::span<const double> v, RegularizerKind kind, double mu) {
  double sum = 0.0, sum_sq = 0.0;
  for (double x : v) {
    sum += x;
    sum_sq += x * x;
  }
  switch (kind) {
    case RegularizerKind::proposed: {
      const double norm = std::sqrt(sum_sq);
      return mu * (norm * norm * norm / 3.0 - sum);
    }
    case RegularizerKind::hard:
      return -mu * sum;
    case RegularizerKind::linear:
      return 0.5 * mu * (sum_sq - 2.0 * sum);
    case RegularizerKind::logarithmic: {
      if (logarithmic_falls_back(mu)) return 0.5 * mu * (sum_sq - 2.0 * sum);
      const double zeta = 1.0 - mu;
      const double log_zeta = std::log(zeta);
      double total = 0.0;
      for (double x : v) total += zeta * x - std::pow(zeta, x) / log_zeta;
      return total;
    }
  }
  throw UsageError("regularizer_value: unknown kind");
}

double variant_weight(double eta, double mu, RegularizerKind kind) {
  check_mu(mu, "variant_weight");
  check_eta(eta, "variant_weight");
  switch (kind) {
    case RegularizerKind::proposed:
      return proposed_weight(eta, mu);
    case RegularizerKind::hard:
      return eta < mu ? 1.0 : 0.0;
    case RegularizerKind::linear:
      return std::max(0.0, 1.0 - eta / mu);
    case RegularizerKind::logarithmic: {
      if (logarithmic_falls_back(mu)) return std::max(0.0, 1.0 - eta / mu);
      if (eta >= mu) return 0.0;
      const double zeta = 1.0 - mu;
      return clamp01(std::log(eta + zeta) / std::log(zeta));
    }
  }
  throw UsageError("variant_weight: unknown kind");
}

std::string to_string(const MuPolicy& policy) {
  switch (policy.kind) {
    case MuPolicy::Kind::fixed: return "fixed:" + shortest(policy.value);
    case MuPolicy::Kind::topk:
      return policy.value == 0.0 ? std::string("topk:auto")
                                 : "topk:" + std::to_string(static_cast<std::size_t>(policy.value));
    case MuPolicy::Kind::quantile: return "quantile:" + shortest(policy.value);
  }
  return "?";
}

MuPolicy parse_mu_policy(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("mu policy '" + text + "' lacks ':'");
  const std::string kind = text.substr(0, colon);
  const std::string arg = text.substr(colon + 1);
  auto number = [&]() {
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), x);
    if (ec != std::errc() || ptr != arg.data() + arg.size()) {
      throw UsageError("mu policy '" + text + "': bad number");
    }
    return x;
  };
  if (kind == "fixed") {
    const double mu = number();
    check_mu(mu, "mu policy fixed");
    return MuPolicy::fixed(mu);
  }
  if (kind == "topk") {
    if (arg == "auto") return MuPolicy::topk(0);
    const double k = number();
    if (!(k >= 1.0) || k != std::floor(k)) throw UsageError("mu policy topk: k must be a positive integer");
    return MuPolicy::topk(static_cast<std::size_t>(k));
  }
  if (kind == "quantile") {
    const double rho = number();
    if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("mu policy quantile: rho outside [0,1]");
    return MuPolicy::quantile(rho);
  }
  throw UsageError("unknown mu policy '" + kind + "'");
}

double resolve_mu(std::span<const double> etas, const MuPolicy& policy) {
  if (etas.empty()) throw UsageError("resolve_mu: no past tasks");
  std::vector<double> sorted(etas.begin(), etas.end());
  std::sort(sorted.begin(), sorted.end());
  double mu = 0.0;
  switch (policy.kind) {
    case MuPolicy::Kind::fixed:
      check_mu(policy.value, "resolve_mu");
      return policy.value;
    case MuPolicy::Kind::topk: {
      std::size_t k = static_cast<std::size_t>(policy.value);
      if (k == 0) k = (sorted.size() + 1) / 2;
      k = std::min(k, sorted.size());
      mu = sorted[k - 1] * (1.0 + 1e-9);
      break;
    }
    case MuPolicy::Kind::quantile: {
      const double rho = policy.value;
      if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("resolve_mu: rho outside [0,1]");
      const double pos = rho * static_cast<double>(sorted.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      mu = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
      break;
    }
  }
  return mu > 0.0 ? mu : std::numeric_limits<double>::min();
}

std::size_t PriorityWeights::positive_count() const {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x > 0.0; }));
}

PriorityWeights weight_vector(std::span<const double> psis, const MuPolicy& policy,
                              RegularizerKind kind) {
  if (psis.empty()) throw UsageError("weight_vector: no past-task accuracies");
  PriorityWeights out;
  out.eta.reserve(psis.size());
  for (double psi : psis) out.eta.push_back(difficulty(psi));
  out.mu = resolve_mu(out.eta, policy);
  if (kind == RegularizerKind::logarithmic && logarithmic_falls_back(out.mu)) {
    out.warnings.push_back("logarithmic regularizer needs 0 < mu < 1 (mu = " + shortest(out.mu) +
                           "); using linear weights");
  }
  out.v.reserve(psis.size());
  for (double eta : out.eta) out.v.push_back(variant_weight(eta, out.mu, kind));
  return out;
}

ConditionReport regularizer_conditions_check(RegularizerKind kind, const ConditionOptions& options) {
  if (options.trials == 0) throw UsageError("regularizer_conditions_check: trials must be >= 1");
  if (options.grid < 2) throw UsageError("regularizer_conditions_check: grid must be >= 2");
  ConditionReport report;
  auto fail = [&](std::string condition, std::string where) {
    if (report.failures.size() < 32) report.failures.push_back({std::move(condition), std::move(where)});
  };
  const bool log_kind = kind == RegularizerKind::logarithmic;
  const double mu_max = log_kind ? 1.0 : options.grid_max;
  const std::size_t n = options.grid;
  auto eta_at = [&](std::size_t i) { return options.grid_max * static_cast<double>(i + 1) / static_cast<double>(n); };
  auto mu_at = [&](std::size_t j) {
    return log_kind ? static_cast<double>(j + 1) / static_cast<double>(n + 1)
                    : mu_max * static_cast<double>(j + 1) / static_cast<double>(n);
  };

  // 1) convexity of the per-task term in v on [0,1]
  Rng rng(options.seed);
  const double h = 1.0 / static_cast<double>(n);
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    double mu = rng.uniform() * mu_max;
    if (mu <= 0.0) mu = mu_max * 0.5;
    auto g = [&](double v) { return regularizer_value(std::span<const double>(&v, 1), kind, mu); };
    for (std::size_t k = 1; k < n; ++k) {
      const double v = static_cast<double>(k) * h;
      const double second = g(v - h) - 2.0 * g(v) + g(v + h);
      ++report.evaluations;
      if (second < -options.convexity_tol) {
        fail("convexity", "mu=" + shortest(mu) + " v=" + shortest(v) + " second_difference=" + shortest(second));
        break;
      }
    }
  }

  // 2) and 3) monotonicity on the (eta, mu) grid, plus range
  std::vector<double> grid(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = variant_weight(eta_at(i), mu_at(j), kind);
      grid[j * n + i] = v;
      ++report.evaluations;
      if (!(v >= 0.0 && v <= 1.0)) fail("range", witness(eta_at(i), mu_at(j), v));
    }
  }
  bool eta_ok = true, mu_ok = true;
  for (std::size_t j = 0; j < n && eta_ok; ++j) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (grid[j * n + i + 1] > grid[j * n + i] + options.monotone_tol) {
        fail("eta-monotonicity", witness(eta_at(i + 1), mu_at(j), grid[j * n + i + 1]) +
                                     " exceeds v(eta=" + shortest(eta_at(i)) + ")=" + shortest(grid[j * n + i]));
        eta_ok = false;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < n && mu_ok; ++i) {
    for (std::size_t j = 0; j + 1 < n; ++j) {
      if (grid[(j + 1) * n + i] < grid[j * n + i] - options.monotone_tol) {
        fail("mu-monotonicity", witness(eta_at(i), mu_at(j + 1), grid[(j + 1) * n + i]) +
                                    " below v(mu=" + shortest(mu_at(j)) + ")=" + shortest(grid[j * n + i]));
        mu_ok = false;
        break;
      }
    }
  }

  // 4) limits
  for (std::size_t j = 0; j < n; ++j) {
    const double mu = mu_at(j);
    const double at_zero = variant_weight(0.0, mu, kind);
    if (std::abs(at_zero - 1.0) > options.monotone_tol) fail("limit eta->0 gives 1", witness(0.0, mu, at_zero));
    const double big_eta = 1e12 * mu_max;
    const double at_inf = variant_weight(big_eta, mu, kind);
    if (at_inf > options.monotone_tol) fail("limit eta->inf gives 0", witness(big_eta, mu, at_inf));
    report.evaluations += 2;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double eta = eta_at(i);
    const double tiny_mu = 1e-12 * eta;
    const double at_small = variant_weight(eta, tiny_mu, kind);
    if (at_small > options.monotone_tol) fail("limit mu->0 gives 0", witness(eta, tiny_mu, at_small));
    const double at_large = variant_weight(eta, 1e12, kind);
    if (at_large > 1.0) fail("limit mu->inf stays <= 1", witness(eta, 1e12, at_large));
    report.evaluations += 2;
  }
  return report;
}

}  // namespace spwc
