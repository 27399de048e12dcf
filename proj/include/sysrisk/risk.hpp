#pragma once

// Univariate risk of the aggregated loss and empirical inner-risk estimates.

#include <cstddef>
#include <stdexcept>
#include <string>

#include "sysrisk/allocators.hpp"
#include "sysrisk/network.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/scenarios.hpp"

namespace sysrisk {

/// A clearing or evaluation failure tagged with the scenario that caused it.
class ScenarioFailure : public std::runtime_error {
 public:
  ScenarioFailure(std::size_t index, const std::string& what)
      : std::runtime_error("scenario " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Sum of w_i * x_i by pairwise summation; the order depends only on the length.
double weighted_sum(const Eigen::VectorXd& x, const Eigen::VectorXd& w);

double eta_expectation(const Eigen::VectorXd& losses, const Eigen::VectorXd& weights);

enum class RiskKind { kExpectation };

struct RiskMeasure {
  RiskKind kind = RiskKind::kExpectation;
  double operator()(const Eigen::VectorXd& losses, const Eigen::VectorXd& weights) const;
};

struct RiskEvaluation {
  double value = 0;
  std::size_t n_samples = 0;
  Eigen::VectorXd per_scenario_losses;
};

/// Per-scenario loss of the bailout c * phi(net).
Eigen::VectorXd scenario_losses(const ScenarioSet& set, const Allocator& alloc, double c,
                                const ClearingOptions& opts = {}, WorkerPool* pool = nullptr);

/// eta of the loss under the given allocator at capital c. Model kNone
/// ignores c and injects nothing.
RiskEvaluation inner_risk_estimate(const ScenarioSet& set, const Allocator& alloc, double c,
                                   const ClearingOptions& opts = {}, WorkerPool* pool = nullptr,
                                   const RiskMeasure& eta = {});

RiskEvaluation no_bailout_risk(const ScenarioSet& set, const ClearingOptions& opts = {},
                               WorkerPool* pool = nullptr, const RiskMeasure& eta = {});

/// risk <= b.
bool acceptance_check(double risk, double b);

}  // namespace sysrisk
