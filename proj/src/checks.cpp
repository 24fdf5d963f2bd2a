#include "spwc/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spwc/mlp.hpp"
#include "spwc/rng.hpp"
#include "spwc/trainer.hpp"

namespace spwc {

namespace {

std::string sci(double x) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << x;
  return s.str();
}

double relative_error(const ParamVector& analytic, const ParamVector& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  return scale > 0.0 ? (analytic - numeric).norm() / scale : 0.0;
}

template <typename F>
ParamVector central_difference(ParamVector theta, F&& f, double h) {
  ParamVector g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = f(theta);
    theta[i] = saved - h;
    const double down = f(theta);
    theta[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

double grid_argmin_weight(double eta, double mu, double step) {
  const auto points = static_cast<std::size_t>(std::llround(1.0 / step));
  double best_v = 0.0;
  double best = weight_objective(0.0, eta, mu);
  for (std::size_t i = 1; i <= points; ++i) {
    const double v = std::min(1.0, static_cast<double>(i) * step);
    const double f = weight_objective(v, eta, mu);
    if (f < best) {
      best = f;
      best_v = v;
    }
  }
  return best_v;
}

CheckResult check_regularizer_conditions(RegularizerKind kind) {
  const ConditionReport report = regularizer_conditions_check(kind);
  CheckResult r{"regularizer conditions (" + to_string(kind) + ")", report.passed(), {}};
  r.detail = std::to_string(report.evaluations) + " evaluations";
  if (!report.passed()) {
    r.detail += "; first failure: " + report.failures.front().condition + " at " +
                report.failures.front().witness;
  }
  return r;
}

CheckResult check_closed_form(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    // (0,5]: 5 * (1 - u) with u in [0,1).
    const double eta = 5.0 * (1.0 - rng.uniform());
    const double mu = 5.0 * (1.0 - rng.uniform());
    worst = std::max(worst, std::abs(proposed_weight(eta, mu) - grid_argmin_weight(eta, mu, 1e-4)));
  }
  return {"closed-form weight vs grid argmin", worst <= 1e-3,
          std::to_string(trials) + " trials, max |diff| " + sci(worst)};
}

CheckResult check_ce_gradient(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  const std::size_t hidden[] = {7, 5};
  const std::size_t heads[] = {3, 4};
  for (std::size_t k = 0; k < instances; ++k) {
    MlpModel model(6, hidden, heads);
    model.initialize(rng);
    // Nonzero biases keep every relu preactivation off its kink at 0.
    for (Eigen::Index i = 0; i < model.parameters().size(); ++i) model.parameters()[i] += 0.1 * rng.normal();
    Batch batch;
    batch.head = k % 2;
    batch.inputs.resize(5, 6);
    for (Eigen::Index i = 0; i < batch.inputs.size(); ++i) batch.inputs.data()[i] = rng.normal();
    for (int i = 0; i < 5; ++i) batch.labels.push_back(static_cast<Label>(rng.below(heads[batch.head])));
    const LossAndGrad analytic = ce_loss_and_grad(model, batch);
    const ParamVector numeric = central_difference(
        model.parameters(),
        [&](const ParamVector& theta) {
          MlpModel probe = model;
          probe.parameters() = theta;
          return ce_loss(probe, batch.inputs, batch.labels, batch.head);
        },
        1e-6);
    worst = std::max(worst, relative_error(analytic.grad, numeric));
  }
  return {"cross-entropy gradient vs finite differences", worst < 1e-4,
          std::to_string(instances) + " instances, max relative error " + sci(worst)};
}

CheckResult check_penalty_gradient(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < instances; ++k) {
    const Eigen::Index n = 40;
    const PenaltyFamily family = k % 2 ? PenaltyFamily::mas : PenaltyFamily::ewc;
    ParamVector theta(n);
    for (Eigen::Index i = 0; i < n; ++i) theta[i] = rng.normal();
    std::vector<TaskSnapshot> snapshots(3);
    std::vector<double> v{rng.uniform(), 0.0, rng.uniform()};
    for (auto& s : snapshots) {
      s.theta_star.resize(n);
      s.importance.values.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        s.theta_star[i] = rng.normal();
        s.importance.values[i] = rng.uniform();
      }
    }
    const double strength = rng.uniform(0.1, 10.0);
    const PenaltyAndGrad analytic = penalty_and_grad(theta, snapshots, v, strength, family);
    const ParamVector numeric = central_difference(
        theta, [&](const ParamVector& t) { return penalty_value(t, snapshots, v, strength, family); },
        1e-5);
    worst = std::max(worst, relative_error(analytic.grad, numeric));
  }
  return {"penalty gradient vs finite differences", worst < 1e-6,
          std::to_string(instances) + " instances, max relative error " + sci(worst)};
}

std::vector<CheckResult> run_checks(std::uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(check_regularizer_conditions(RegularizerKind::proposed));
  results.push_back(check_closed_form(100, seed));
  results.push_back(check_ce_gradient(20, seed + 1));
  results.push_back(check_penalty_gradient(20, seed + 2));
  return results;
}

}  // namespace spwc
