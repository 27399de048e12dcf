#include "sysrisk/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sysrisk {

using ad::Tape;
using ad::Tensor;
using ad::Var;

// ---- Adam -----------------------------------------------------------------------

Adam::Adam(AdamOptions opts, const ParameterSet& like) : opts_(opts) {
  if (!(opts.lr > 0) || !(opts.beta1 >= 0 && opts.beta1 < 1) || !(opts.beta2 >= 0 && opts.beta2 < 1) ||
      !(opts.eps > 0))
    throw std::invalid_argument("Adam: invalid hyperparameters");
  for (const auto& t : like) {
    m_.push_back(Tensor::Zero(t.value.rows(), t.value.cols()));
    v_.push_back(Tensor::Zero(t.value.rows(), t.value.cols()));
  }
}

void Adam::step(ParameterSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size() || params.size() != m_.size())
    throw ad::ShapeError("Adam: gradient count mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].rows() != m_[k].rows() || grads[k].cols() != m_[k].cols())
      throw ad::ShapeError("Adam: gradient shape mismatch for '" + params[k].name + "'");
    if (!grads[k].allFinite()) throw std::domain_error("Adam: non-finite gradient for '" + params[k].name + "'");
  }
  ++t_;
  const double b1 = opts_.beta1, b2 = opts_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    m_[k] = b1 * m_[k] + (1.0 - b1) * grads[k];
    v_[k] = b2 * v_[k] + (1.0 - b2) * grads[k].cwiseAbs2();
    params[k].value.array() -=
        opts_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + opts_.eps);
    if (!params[k].value.allFinite())
      throw std::domain_error("Adam: update overflowed '" + params[k].name + "'");
  }
}

// ---- config -----------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0) || !(lr_capital > 0)) throw std::invalid_argument("learning rates must be positive");
  if (!(mu1 >= mu2 && mu2 > 0)) throw std::invalid_argument("need mu1 >= mu2 > 0");
  if (!(b >= 0)) throw std::invalid_argument("acceptance level b must be non-negative");
  if (capital_init && !(*capital_init >= 0)) throw std::invalid_argument("capital_init must be >= 0");
  if (lr_grid.empty()) throw std::invalid_argument("lr_grid must not be empty");
  for (double g : lr_grid)
    if (!(g > 0)) throw std::invalid_argument("lr_grid entries must be positive");
  if (chunk_size < 1) throw std::invalid_argument("chunk_size must be positive");
  if (!(band_fraction >= 0)) throw std::invalid_argument("band_fraction must be non-negative");
  if (!(clearing.tol > 0)) throw std::invalid_argument("clearing tolerance must be positive");
}

// ---- objectives -----------------------------------------------------------------

Var inner_objective(Tape& tape, const ScenarioSet& set, const Allocator& alloc, std::span<const Var> p,
                    const Var& capital, const ClearingOptions& opts) {
  if (set.empty()) throw std::invalid_argument("inner_objective: empty scenario set");
  std::vector<Var> losses;
  losses.reserve(set.size());
  for (std::size_t k = 0; k < set.size(); ++k) {
    const auto& net = set[k];
    const Var y = ad::scale(alloc.weights(tape, net, p), capital);
    losses.push_back(ad::shortfall(ad::add(tape.constant(net.assets()), y), derive_liabilities(net), opts));
  }
  return ad::sum(ad::cwise_mul(ad::concat_rows(losses), tape.constant(set.weights())));
}

namespace {

struct Accumulator {
  double value = 0;
  std::vector<Tensor> grads;
};

// Runs `per_scenario(k, acc)` over chunks of consecutive scenarios and sums
// the chunk accumulators in chunk order.
template <class F>
Accumulator chunked_reduce(std::size_t n, std::size_t chunk, const std::vector<Tensor>& shapes,
                           WorkerPool* pool, F&& per_scenario) {
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<Accumulator> parts(n_chunks);
  parallel_for(pool, n_chunks, [&](std::size_t j) {
    Accumulator& acc = parts[j];
    for (const auto& s : shapes) acc.grads.push_back(Tensor::Zero(s.rows(), s.cols()));
    for (std::size_t k = j * chunk; k < std::min(n, (j + 1) * chunk); ++k) {
      try {
        per_scenario(k, acc);
      } catch (const ScenarioFailure&) {
        throw;
      } catch (const ad::NonFiniteError&) {
        throw;
      } catch (const std::exception& e) {
        throw ScenarioFailure(k, e.what());
      }
    }
  });
  Accumulator total;
  for (const auto& s : shapes) total.grads.push_back(Tensor::Zero(s.rows(), s.cols()));
  for (const auto& part : parts) {
    total.value += part.value;
    for (std::size_t g = 0; g < total.grads.size(); ++g) total.grads[g] += part.grads[g];
  }
  return total;
}

std::vector<Tensor> shapes_of(const ParameterSet& ps) {
  std::vector<Tensor> out;
  for (const auto& t : ps) out.push_back(Tensor::Zero(t.value.rows(), t.value.cols()));
  return out;
}

}  // namespace

ObjectiveValue inner_objective(const ScenarioSet& set, const Allocator& alloc, double c,
                               const ClearingOptions& opts, WorkerPool* pool, std::size_t chunk_size) {
  if (set.empty()) throw std::invalid_argument("inner_objective: empty scenario set");
  if (!(c >= 0) || !std::isfinite(c)) throw std::invalid_argument("capital must be finite and >= 0");
  const bool none = alloc.kind() == ModelKind::kNone;
  auto acc = chunked_reduce(set.size(), chunk_size, shapes_of(alloc.params()), pool,
                            [&](std::size_t k, Accumulator& a) {
                              const auto& net = set[k];
                              const double w = set.weights()(static_cast<Index>(k));
                              Tape tape;
                              const auto p = bind(tape, alloc.params(), true);
                              const Var assets = tape.constant(net.assets());
                              const Var total =
                                  none ? assets : ad::add(assets, ad::scale(alloc.weights(tape, net, p), c));
                              const Var loss = ad::shortfall(total, derive_liabilities(net), opts);
                              a.value += w * loss.scalar();
                              if (p.empty()) return;
                              const auto g = tape.backward(loss, p);
                              for (std::size_t i = 0; i < g.size(); ++i) a.grads[i] += w * g[i];
                            });
  return {acc.value, std::move(acc.grads)};
}

double outer_objective(double risk, double c, double b, double mu1, double mu2) {
  return mu1 * std::max(risk - b, 0.0) + mu2 * c;
}

OuterObjective outer_objective(const ScenarioSet& set, const Allocator& alloc, double c, double b,
                               double mu1, double mu2, const ClearingOptions& opts, WorkerPool* pool,
                               std::size_t chunk_size) {
  if (set.empty()) throw std::invalid_argument("outer_objective: empty scenario set");
  if (!(c >= 0) || !std::isfinite(c)) throw std::invalid_argument("capital must be finite and >= 0");
  const std::vector<Tensor> shape{Tensor::Zero(1, 1)};
  auto acc = chunked_reduce(set.size(), chunk_size, shape, pool, [&](std::size_t k, Accumulator& a) {
    const auto& net = set[k];
    const double w = set.weights()(static_cast<Index>(k));
    Tape tape;
    const Var cap = tape.variable(Tensor::Constant(1, 1, c));
    const Var phi = tape.constant(alloc.weights(net));
    const Var loss =
        ad::shortfall(ad::add(tape.constant(net.assets()), ad::scale(phi, cap)), derive_liabilities(net), opts);
    a.value += w * loss.scalar();
    a.grads[0] += w * tape.backward(loss, std::span<const Var>(&cap, 1))[0];
  });
  OuterObjective out;
  out.risk = acc.value;
  out.risk_derivative = acc.grads[0](0, 0);
  out.value = outer_objective(out.risk, c, b, mu1, mu2);
  // the positive part has derivative 0 at the kink
  out.gradient = (out.risk > b ? mu1 * out.risk_derivative : 0.0) + mu2;
  return out;
}

// ---- inner training -------------------------------------------------------------

namespace {

// One epoch of parameter updates at capital c. Returns the full-batch
// objective at the parameters before the epoch when it was computed as a
// by-product (full batch), NaN otherwise.
class InnerStepper {
 public:
  InnerStepper(Allocator& alloc, const TrainConfig& cfg, double lr, WorkerPool* pool)
      : alloc_(alloc), cfg_(cfg), pool_(pool), adam_(cfg.adam(lr), alloc.params()) {}

  bool full_batch(const ScenarioSet& train) const {
    return cfg_.batch_size == 0 || cfg_.batch_size >= train.size();
  }

  // Gradient at the current parameters on the full set; cached for step().
  double evaluate_full(const ScenarioSet& train, double c) {
    cached_ = inner_objective(train, alloc_, c, cfg_.clearing, pool_, cfg_.chunk_size);
    return cached_.value;
  }

  void step_cached() { adam_.step(alloc_.params(), cached_.grads); }

  void step_minibatches(const ScenarioSet& train, double c, std::size_t epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = stream_rng(cfg_.seed, 0x6d696e69ULL + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg_.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), s + cfg_.batch_size)));
      const auto batch = train.subset(idx);
      const auto obj = inner_objective(batch, alloc_, c, cfg_.clearing, pool_, cfg_.chunk_size);
      if (!std::isfinite(obj.value)) throw ad::NonFiniteError("non-finite minibatch loss");
      adam_.step(alloc_.params(), obj.grads);
    }
  }

 private:
  Allocator& alloc_;
  const TrainConfig& cfg_;
  WorkerPool* pool_;
  Adam adam_;
  ObjectiveValue cached_;
};

double evaluate_risk(const ScenarioSet& set, const Allocator& alloc, double c, const TrainConfig& cfg,
                     WorkerPool* pool) {
  return inner_risk_estimate(set, alloc, c, cfg.clearing, pool).value;
}

// Trains for `epochs` epochs; calls on_eval(epoch, train_risk) before every
// update and, if final_eval, once after the last one.
template <class OnEval>
void run_epochs(InnerStepper& stepper, const ScenarioSet& train, const Allocator& alloc, double c,
                std::size_t epochs, bool final_eval, std::size_t epoch_offset, const TrainConfig& cfg,
                WorkerPool* pool, OnEval&& on_eval) {
  const bool full = stepper.full_batch(train);
  for (std::size_t e = 0; e <= epochs; ++e) {
    const std::size_t global = epoch_offset + e;
    if (e == epochs && !final_eval) break;
    try {
      const double risk = full ? stepper.evaluate_full(train, c) : evaluate_risk(train, alloc, c, cfg, pool);
      if (!std::isfinite(risk)) throw ad::NonFiniteError("non-finite training loss");
      on_eval(global, risk);
      if (e == epochs) break;
      if (full) {
        stepper.step_cached();
      } else {
        stepper.step_minibatches(train, c, global);
      }
    } catch (const ad::NonFiniteError& err) {
      throw TrainingDiverged(global, err.what());
    } catch (const std::domain_error& err) {
      throw TrainingDiverged(global, err.what());
    }
  }
}

}  // namespace

InnerResult train_inner(const ScenarioSet& train, const ScenarioSet* val, Allocator& alloc, double c,
                        const TrainConfig& cfg, WorkerPool* pool) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_inner: empty training set");
  InnerResult result;
  const bool has_val = val != nullptr && !val->empty();
  if (!alloc.trainable()) {
    result.best_params = result.final_params = alloc.params();
    EpochRecord rec;
    rec.capital = c;
    rec.train_risk = evaluate_risk(train, alloc, c, cfg, pool);
    if (has_val) rec.val_risk = evaluate_risk(*val, alloc, c, cfg, pool);
    result.best_risk = has_val ? rec.val_risk : rec.train_risk;
    result.history.push_back(rec);
    return result;
  }

  InnerStepper stepper(alloc, cfg, cfg.lr, pool);
  run_epochs(stepper, train, alloc, c, cfg.epochs_inner, true, 0, cfg, pool, [&](std::size_t epoch, double risk) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.capital = c;
    rec.train_risk = risk;
    if (has_val) rec.val_risk = evaluate_risk(*val, alloc, c, cfg, pool);
    result.history.push_back(rec);
    const double sel = has_val ? rec.val_risk : rec.train_risk;
    if (!std::isfinite(sel)) throw ad::NonFiniteError("non-finite validation loss");
    if (sel < result.best_risk) {
      result.best_risk = sel;
      result.best_epoch = epoch;
      result.best_params = alloc.params();
    }
  });
  result.final_params = alloc.params();
  if (cfg.select_on_validation) {
    alloc.params() = result.best_params;
  } else {
    result.best_params = result.final_params;
    result.best_epoch = cfg.epochs_inner;
    const auto& last = result.history.back();
    result.best_risk = has_val ? last.val_risk : last.train_risk;
  }
  return result;
}

// ---- outer training -------------------------------------------------------------

OuterResult train_outer(const ScenarioSet& train, const ScenarioSet* val, Allocator& alloc,
                        const TrainConfig& cfg, WorkerPool* pool) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_outer: empty training set");
  const bool has_val = val != nullptr && !val->empty();
  double c = cfg.capital_init ? *cfg.capital_init
                              : no_bailout_risk(train, cfg.clearing, pool).value /
                                    static_cast<double>(train.n_nodes());

  OuterResult out;
  out.band = cfg.band_fraction * cfg.b;
  ParameterSet capital;
  capital.add("c", Tensor::Constant(1, 1, c));
  Adam adam_c(cfg.adam(cfg.lr_capital), capital);
  std::optional<InnerStepper> stepper;
  if (alloc.trainable()) stepper.emplace(alloc, cfg, cfg.lr, pool);

  bool have_best = false;
  std::size_t epoch_offset = 0;
  for (std::size_t round = 0; round < cfg.epochs_outer; ++round) {
    if (stepper) {
      run_epochs(*stepper, train, alloc, c, cfg.epochs_inner, false, epoch_offset, cfg, pool,
                 [&](std::size_t epoch, double risk) {
                   EpochRecord rec;
                   rec.round = round;
                   rec.epoch = epoch;
                   rec.capital = c;
                   rec.train_risk = risk;
                   out.history.push_back(rec);
                 });
      epoch_offset += cfg.epochs_inner;
    }

    OuterObjective jo;
    try {
      jo = outer_objective(train, alloc, c, cfg.b, cfg.mu1, cfg.mu2, cfg.clearing, pool, cfg.chunk_size);
    } catch (const ad::NonFiniteError& err) {
      throw TrainingDiverged(epoch_offset, err.what());
    }
    const double measured = jo.risk;
    if (!std::isfinite(measured)) throw TrainingDiverged(epoch_offset, "non-finite risk");

    out.trajectory.push_back({round, c, measured, jo.value});
    if (has_val && !out.history.empty()) out.history.back().val_risk = evaluate_risk(*val, alloc, c, cfg, pool);

    const bool accepted = acceptance_check(measured, cfg.b);
    const bool better = !have_best ||
                        (accepted && (!out.accepted || c < out.capital)) ||
                        (!accepted && !out.accepted &&
                         (measured < out.train_risk || (measured == out.train_risk && c < out.capital)));
    if (better) {
      have_best = true;
      out.accepted = accepted;
      out.capital = c;
      out.train_risk = measured;
      out.params = alloc.params();
    }

    adam_c.step(capital, {Tensor::Constant(1, 1, jo.gradient)});
    capital.get("c")(0, 0) = std::max(capital.get("c")(0, 0), 0.0);
    c = capital.get("c")(0, 0);
  }
  if (have_best) alloc.params() = out.params;
  out.within_band = have_best && std::abs(out.train_risk - cfg.b) <= out.band;
  return out;
}

// ---- grid search ----------------------------------------------------------------

GridSearchResult lr_grid_search(const ScenarioSet& train, const ScenarioSet* val, Allocator& alloc, double c,
                                const TrainConfig& cfg, WorkerPool* pool) {
  cfg.validate();
  GridSearchResult out;
  const std::uint64_t init_seed = alloc.config().seed;
  for (double lr : cfg.lr_grid) {
    GridEntry entry;
    entry.lr = lr;
    alloc.initialize(init_seed);
    TrainConfig run = cfg;
    run.lr = lr;
    try {
      InnerResult r = train_inner(train, val, alloc, c, run, pool);
      entry.risk = r.best_risk;
      if (std::isnan(out.best_lr) || r.best_risk < out.best.best_risk) {
        out.best_lr = lr;
        out.best = std::move(r);
      }
    } catch (const TrainingDiverged& e) {
      entry.diverged = true;
      entry.error = e.what();
    }
    out.entries.push_back(entry);
    if (!entry.diverged && entry.risk <= cfg.grid_stop_risk) break;
  }
  if (std::isnan(out.best_lr)) throw std::runtime_error("lr_grid_search: every learning rate diverged");
  alloc.params() = out.best.best_params;
  return out;
}

}  // namespace sysrisk
