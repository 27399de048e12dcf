#pragma once

// Reverse-mode automatic differentiation over dense fp64 matrices.
//
// A Tape records every operation in execution order; backward() walks the
// records in reverse exactly once.  Vectors are column matrices (n x 1) and
// scalars are 1 x 1.  Shapes must match exactly except for the explicit
// scalar-with-tensor ops (scale, add_scalar).
//
// Subgradient conventions:
//   minimum(a, b) at a tie sends the whole gradient to `a`;
//   positive_part(x) at x == 0 has derivative 0.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sysrisk/network.hpp"

namespace sysrisk::ad {

using Tensor = Eigen::MatrixXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tape;

/// Handle to a recorded value.  Cheap to copy; valid as long as its tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 Var.
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives the upstream gradient of the node and pushes contributions to
  /// its parents through accumulate().
  using Backward = std::function<void(const Tensor& upstream, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient can be requested in backward().
  Var variable(Tensor value);

  /// Record an op result.  `backward` runs only if some parent needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  /// Add `g` to the gradient of node `id` (no-op for constants).
  void accumulate(int id, const Tensor& g);
  void accumulate(int id, Tensor&& g);

  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradients of the scalar `loss` with respect to `wrt`, in order.  Nodes
  /// not reached by the loss get a zero gradient of the right shape.
  std::vector<Tensor> backward(Var loss, std::span<const Var> wrt);

  /// Number of backward closures run by the most recent backward() call.
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };
  void check_owned(const Var& v, const char* what) const;
  // deque keeps references to node values stable while the tape grows
  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
};

// ---- forward ops ------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
/// Scalar (1x1) Var times tensor.
Var scale(const Var& a, const Var& s);
Var add_scalar(const Var& a, double s);
Var cwise_mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
/// Matrix times column vector; same as matmul with a shape check on `x`.
Var matvec(const Var& a, const Var& x);
Var transpose(const Var& a);
/// Column-major reshape.
Var reshape(const Var& a, Index rows, Index cols);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
/// Sum of all entries, 1x1.
Var sum(const Var& a);
Var mean(const Var& a);
/// Column sums, 1 x cols.
Var sum_rows(const Var& a);
/// Sums consecutive blocks of `group` rows: (k*group) x c -> k x c.
Var segment_sum(const Var& a, Index group);
/// Stacks a 1 x c row `n` times.
Var repeat_rows(const Var& row, Index n);
Var minimum(const Var& a, const Var& b);
Var positive_part(const Var& a);
Var sigmoid(const Var& a);
/// Softmax over all entries of a vector, or over each row of a matrix.
Var softmax(const Var& a);
Var index_select_rows(const Var& a, std::vector<Index> rows);
/// x * w + 1 * b with x: n x in, w: in x out, b: 1 x out.
Var linear(const Var& x, const Var& w, const Var& b);
/// x * w without bias.
Var linear(const Var& x, const Var& w);

// ---- clearing ---------------------------------------------------------------

/// Shortfall sum_i (total_i - p_i) of the greatest clearing vector for the
/// given asset vector (n x 1).  Backward unrolls exactly the Picard steps the
/// forward solver performed.
Var shortfall(const Var& assets, const DerivedLiabilities& deriv, const ClearingOptions& opts = {});

/// The same truncated map built from primitive ops (matvec + minimum per
/// step).  Slower; kept as an independent route for testing the fused op.
Var shortfall_unrolled(const Var& assets, const DerivedLiabilities& deriv,
                       const ClearingOptions& opts = {});

// ---- gradient checking -----------------------------------------------------

using ScalarFunction = std::function<Var(Tape&, const Var&)>;

struct GradCheckOptions {
  double h = 1e-6;
  /// Denominator floor in |ad - fd| / max(|ad|, |fd|, floor).
  double floor = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0;
  Index worst_index = -1;
  Tensor analytic;
  Tensor numeric;
};

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, const GradCheckOptions& opts = {});

}  // namespace sysrisk::ad
