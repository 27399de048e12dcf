#pragma once

// Inner training of allocator parameters at fixed capital and the outer
// capital search against an acceptance threshold.

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sysrisk/allocators.hpp"
#include "sysrisk/autodiff.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/risk.hpp"
#include "sysrisk/scenarios.hpp"

namespace sysrisk {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a ParameterSet.
class Adam {
 public:
  Adam(AdamOptions opts, const ParameterSet& like);

  /// Throws std::domain_error on a non-finite gradient.
  void step(ParameterSet& params, const std::vector<ad::Tensor>& grads);

  std::size_t step_count() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  std::vector<ad::Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// Non-finite loss or gradient during training.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct TrainConfig {
  std::size_t epochs_inner = 1000;  // N_I; per outer round in train_outer
  std::size_t epochs_outer = 100;   // N_O
  double lr = 1e-2;
  double lr_capital = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double mu1 = 1.0;
  double mu2 = 1e-3;
  double b = 0.0;
  /// Defaults to no-bailout risk / N.
  std::optional<double> capital_init;
  /// 0 = full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::vector<double> lr_grid{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  /// Grid search stops at the first learning rate whose selection risk is
  /// at or below this value.
  double grid_stop_risk = -std::numeric_limits<double>::infinity();
  bool select_on_validation = true;
  /// Acceptance band around b, as a fraction of b.
  double band_fraction = 0.02;
  /// Scenarios per reduction chunk. Results do not depend on the thread
  /// count, only on this value.
  std::size_t chunk_size = 8;
  ClearingOptions clearing;

  void validate() const;
  AdamOptions adam(double learning_rate) const { return {learning_rate, beta1, beta2, adam_eps}; }
};

struct ObjectiveValue {
  double value = 0;
  std::vector<ad::Tensor> grads;
};

/// J_I on a single tape: weighted mean of the shortfall of a + c * phi(a, l),
/// with `p` bound to the allocator's parameters.
ad::Var inner_objective(ad::Tape& tape, const ScenarioSet& set, const Allocator& alloc,
                        std::span<const ad::Var> p, const ad::Var& capital,
                        const ClearingOptions& opts = {});

/// J_I and its gradient in the allocator's parameters, reduced over
/// fixed-size chunks of scenarios in chunk order.
ObjectiveValue inner_objective(const ScenarioSet& set, const Allocator& alloc, double c,
                               const ClearingOptions& opts = {}, WorkerPool* pool = nullptr,
                               std::size_t chunk_size = 8);

/// mu1 * (risk - b)^+ + mu2 * c.
double outer_objective(double risk, double c, double b, double mu1, double mu2);

struct OuterObjective {
  double value = 0;
  double risk = 0;
  /// d eta / dc with phi held fixed.
  double risk_derivative = 0;
  /// dJ_O / dc.
  double gradient = 0;
};

/// J_O at c with phi held at the allocator's current output.
OuterObjective outer_objective(const ScenarioSet& set, const Allocator& alloc, double c, double b,
                               double mu1, double mu2, const ClearingOptions& opts = {},
                               WorkerPool* pool = nullptr, std::size_t chunk_size = 8);

struct EpochRecord {
  std::size_t round = 0;
  std::size_t epoch = 0;
  double capital = 0;
  double train_risk = 0;
  double val_risk = std::numeric_limits<double>::quiet_NaN();
};

struct InnerResult {
  ParameterSet best_params;
  ParameterSet final_params;
  std::size_t best_epoch = 0;
  double best_risk = std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> history;
};

/// Adam on J_I for cfg.epochs_inner epochs. Leaves the selected parameters
/// (best validation risk, or best train risk without a validation set, or
/// the final ones if selection is off) in alloc.params().
InnerResult train_inner(const ScenarioSet& train, const ScenarioSet* val, Allocator& alloc, double c,
                        const TrainConfig& cfg, WorkerPool* pool = nullptr);

struct CapitalPoint {
  std::size_t round = 0;
  double capital = 0;
  double train_risk = 0;
  double objective = 0;
};

struct OuterResult {
  double capital = 0;
  double train_risk = 0;
  ParameterSet params;
  /// train_risk <= b.
  bool accepted = false;
  /// |train_risk - b| <= band.
  bool within_band = false;
  double band = 0;
  std::vector<CapitalPoint> trajectory;
  std::vector<EpochRecord> history;
};

/// Alternates cfg.epochs_inner warm-started Adam epochs on theta with one
/// Adam step on c, for cfg.epochs_outer rounds. Returns the smallest
/// accepted capital seen together with its parameters, or the lowest-risk
/// pair with accepted = false.
OuterResult train_outer(const ScenarioSet& train, const ScenarioSet* val, Allocator& alloc,
                        const TrainConfig& cfg, WorkerPool* pool = nullptr);

struct GridEntry {
  double lr = 0;
  bool diverged = false;
  double risk = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct GridSearchResult {
  double best_lr = std::numeric_limits<double>::quiet_NaN();
  std::vector<GridEntry> entries;
  InnerResult best;
};

/// train_inner once per learning rate in cfg.lr_grid, each from the
/// parameters drawn from the allocator's seed. Diverged runs are excluded. Leaves the
/// winner's parameters in alloc.params(); throws if every run diverged.
GridSearchResult lr_grid_search(const ScenarioSet& train, const ScenarioSet* val, Allocator& alloc,
                                double c, const TrainConfig& cfg, WorkerPool* pool = nullptr);

}  // namespace sysrisk
