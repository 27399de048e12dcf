#include "sysrisk/risk.hpp"

#include <cmath>

namespace sysrisk {

namespace {

double pairwise(const double* x, const double* w, Index n) {
  if (n <= 8) {
    double s = 0;
    for (Index k = 0; k < n; ++k) s += w[k] * x[k];
    return s;
  }
  const Index h = n / 2;
  return pairwise(x, w, h) + pairwise(x + h, w + h, n - h);
}

}  // namespace

double weighted_sum(const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  if (x.size() != w.size())
    throw std::invalid_argument("weighted_sum: " + std::to_string(x.size()) + " values vs " +
                                std::to_string(w.size()) + " weights");
  return pairwise(x.data(), w.data(), x.size());
}

double eta_expectation(const Eigen::VectorXd& losses, const Eigen::VectorXd& weights) {
  return weighted_sum(losses, weights);
}

double RiskMeasure::operator()(const Eigen::VectorXd& losses, const Eigen::VectorXd& weights) const {
  switch (kind) {
    case RiskKind::kExpectation: return eta_expectation(losses, weights);
  }
  throw std::logic_error("unknown risk measure");
}

Eigen::VectorXd scenario_losses(const ScenarioSet& set, const Allocator& alloc, double c,
                                const ClearingOptions& opts, WorkerPool* pool) {
  if (!(c >= 0) || !std::isfinite(c)) throw std::invalid_argument("capital must be finite and >= 0");
  const bool none = alloc.kind() == ModelKind::kNone;
  Eigen::VectorXd losses(static_cast<Index>(set.size()));
  parallel_for(pool, set.size(), [&](std::size_t k) {
    const auto& net = set[k];
    try {
      const Eigen::VectorXd inject = none ? Eigen::VectorXd::Zero(net.size()) : Eigen::VectorXd(c * alloc.weights(net));
      losses(static_cast<Index>(k)) = shortfall(net, inject, opts);
    } catch (const std::exception& e) {
      throw ScenarioFailure(k, e.what());
    }
  });
  return losses;
}

RiskEvaluation inner_risk_estimate(const ScenarioSet& set, const Allocator& alloc, double c,
                                   const ClearingOptions& opts, WorkerPool* pool, const RiskMeasure& eta) {
  RiskEvaluation r;
  r.per_scenario_losses = scenario_losses(set, alloc, c, opts, pool);
  r.n_samples = set.size();
  r.value = eta(r.per_scenario_losses, set.weights());
  return r;
}

RiskEvaluation no_bailout_risk(const ScenarioSet& set, const ClearingOptions& opts, WorkerPool* pool,
                               const RiskMeasure& eta) {
  ModelConfig none;
  none.kind = ModelKind::kNone;
  return inner_risk_estimate(set, Allocator(none), 0.0, opts, pool, eta);
}

bool acceptance_check(double risk, double b) { return risk <= b; }

}  // namespace sysrisk
