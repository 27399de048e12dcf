#include "sysrisk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace sysrisk::ad {

namespace {

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
  return *a.tape();
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): Var is " + shape_str(v));
  return v(0, 0);
}

// ---- tape -------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  if (!value.allFinite()) throw NonFiniteError("constant: non-finite entries");
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  if (!value.allFinite()) throw NonFiniteError("variable: non-finite entries");
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  if (!value.allFinite()) throw NonFiniteError("forward op produced non-finite values");
  bool needs = false;
  for (const Var& p : parents) {
    check_owned(p, "record");
    needs = needs || nodes_[static_cast<std::size_t>(p.id())].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::accumulate(int id, Tensor&& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = std::move(g);
  else
    n.grad += g;
}

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size())
    throw std::invalid_argument(std::string(what) + ": Var does not belong to this tape");
}

std::vector<Tensor> Tape::backward(Var loss, std::span<const Var> wrt) {
  check_owned(loss, "backward");
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.value()));
  for (const Var& w : wrt) check_owned(w, "backward (parameter)");

  for (Node& n : nodes_) n.grad.resize(0, 0);
  visits_ = 0;
  if (nodes_[static_cast<std::size_t>(loss.id())].needs_grad) {
    nodes_[static_cast<std::size_t>(loss.id())].grad = Tensor::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      ++visits_;
      // closures only write to parents, so n.grad stays valid during the call
      n.backward(n.grad, *this);
    }
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const Node& n = nodes_[static_cast<std::size_t>(w.id())];
    out.push_back(n.grad.size() ? n.grad : Tensor::Zero(n.value.rows(), n.value.cols()));
  }
  return out;
}

// ---- elementary ops ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() + b.value(), {a, b}, [ia, ib](const Tensor& g, Tape& t) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value() - b.value(), {a, b}, [ia, ib](const Tensor& g, Tape& t) {
    t.accumulate(ia, g);
    t.accumulate(ib, Tensor(-g));
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return tape_of(a).record(a.value() * s, {a},
                           [ia, s](const Tensor& g, Tape& t) { t.accumulate(ia, Tensor(g * s)); });
}

Var scale(const Var& a, const Var& s) {
  require_same_tape(a, s, "scale");
  if (s.value().size() != 1) throw ShapeError("scale: factor must be 1x1");
  const int ia = a.id(), is = s.id();
  return tape_of(a).record(a.value() * s.scalar(), {a, s}, [ia, is](const Tensor& g, Tape& t) {
    const double sv = t.value(is)(0, 0);
    t.accumulate(ia, Tensor(g * sv));
    t.accumulate(is, Tensor::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
  });
}

Var add_scalar(const Var& a, double s) {
  const int ia = a.id();
  return tape_of(a).record(a.value().array() + s, {a},
                           [ia](const Tensor& g, Tape& t) { t.accumulate(ia, g); });
}

Var cwise_mul(const Var& a, const Var& b) {
  require_same_tape(a, b, "cwise_mul");
  require_same_shape(a, b, "cwise_mul");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value().cwiseProduct(b.value()), {a, b},
                           [ia, ib](const Tensor& g, Tape& t) {
                             t.accumulate(ia, Tensor(g.cwiseProduct(t.value(ib))));
                             t.accumulate(ib, Tensor(g.cwiseProduct(t.value(ia))));
                           });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions " + shape_str(a.value()) + " * " +
                     shape_str(b.value()));
  const int ia = a.id(), ib = b.id();
  Tensor out = a.value() * b.value();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](const Tensor& g, Tape& t) {
    if (t.needs_grad(ia)) t.accumulate(ia, Tensor(g * t.value(ib).transpose()));
    if (t.needs_grad(ib)) t.accumulate(ib, Tensor(t.value(ia).transpose() * g));
  });
}

Var matvec(const Var& a, const Var& x) {
  if (x.cols() != 1) throw ShapeError("matvec: right operand must be a column vector");
  return matmul(a, x);
}

Var transpose(const Var& a) {
  const int ia = a.id();
  return tape_of(a).record(a.value().transpose(), {a}, [ia](const Tensor& g, Tape& t) {
    t.accumulate(ia, Tensor(g.transpose()));
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size())
    throw ShapeError("reshape: " + shape_str(a.value()) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  const int ia = a.id();
  const Index r0 = a.rows(), c0 = a.cols();
  Tensor out = Eigen::Map<const Tensor>(a.value().data(), rows, cols);
  return tape_of(a).record(std::move(out), {a}, [ia, r0, c0](const Tensor& g, Tape& t) {
    t.accumulate(ia, Tensor(Eigen::Map<const Tensor>(g.data(), r0, c0)));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::pair<int, Index>> layout;  // (id, width)
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    c += p.cols();
  }
  return tape_of(parts[0]).record(std::move(out), parts,
                                  [layout = std::move(layout)](const Tensor& g, Tape& t) {
                                    Index off = 0;
                                    for (auto [id, w] : layout) {
                                      if (t.needs_grad(id))
                                        t.accumulate(id, Tensor(g.middleCols(off, w)));
                                      off += w;
                                    }
                                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<std::pair<int, Index>> layout;
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), p.rows());
    r += p.rows();
  }
  return tape_of(parts[0]).record(std::move(out), parts,
                                  [layout = std::move(layout)](const Tensor& g, Tape& t) {
                                    Index off = 0;
                                    for (auto [id, h] : layout) {
                                      if (t.needs_grad(id))
                                        t.accumulate(id, Tensor(g.middleRows(off, h)));
                                      off += h;
                                    }
                                  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var sum(const Var& a) {
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return tape_of(a).record(Tensor::Constant(1, 1, a.value().sum()), {a},
                           [ia, r, c](const Tensor& g, Tape& t) {
                             t.accumulate(ia, Tensor(Tensor::Constant(r, c, g(0, 0))));
                           });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_rows(const Var& a) {
  const int ia = a.id();
  const Index r = a.rows();
  return tape_of(a).record(a.value().colwise().sum(), {a}, [ia, r](const Tensor& g, Tape& t) {
    t.accumulate(ia, Tensor(g.replicate(r, 1)));
  });
}

Var segment_sum(const Var& a, Index group) {
  if (group < 1 || a.rows() % group != 0)
    throw ShapeError("segment_sum: " + std::to_string(a.rows()) + " rows not divisible by " +
                     std::to_string(group));
  const Index k = a.rows() / group, c = a.cols();
  Tensor out(k, c);
  for (Index s = 0; s < k; ++s) out.row(s) = a.value().middleRows(s * group, group).colwise().sum();
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, k, group, c](const Tensor& g, Tape& t) {
    Tensor ga(k * group, c);
    for (Index s = 0; s < k; ++s) ga.middleRows(s * group, group) = g.row(s).replicate(group, 1);
    t.accumulate(ia, std::move(ga));
  });
}

Var repeat_rows(const Var& row, Index n) {
  if (row.rows() != 1) throw ShapeError("repeat_rows: operand must be a single row");
  const int ia = row.id();
  return tape_of(row).record(row.value().replicate(n, 1), {row}, [ia](const Tensor& g, Tape& t) {
    t.accumulate(ia, Tensor(g.colwise().sum()));
  });
}

Var minimum(const Var& a, const Var& b) {
  require_same_tape(a, b, "minimum");
  require_same_shape(a, b, "minimum");
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(a.value().cwiseMin(b.value()), {a, b},
                           [ia, ib](const Tensor& g, Tape& t) {
                             const auto first = (t.value(ia).array() <= t.value(ib).array());
                             t.accumulate(ia, Tensor(first.select(g, 0.0)));
                             t.accumulate(ib, Tensor(first.select(0.0, g)));
                           });
}

Var positive_part(const Var& a) {
  const int ia = a.id();
  return tape_of(a).record(a.value().cwiseMax(0.0), {a}, [ia](const Tensor& g, Tape& t) {
    t.accumulate(ia, Tensor((t.value(ia).array() > 0.0).select(g, 0.0)));
  });
}

Var sigmoid(const Var& a) {
  Tensor y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const int ia = a.id();
  Tape& tape = tape_of(a);
  const int io = static_cast<int>(tape.size());
  return tape.record(std::move(y), {a}, [ia, io](const Tensor& g, Tape& t) {
    const auto y = t.value(io).array();
    t.accumulate(ia, Tensor(g.array() * y * (1.0 - y)));
  });
}

Var softmax(const Var& a) {
  const bool vector_like = a.rows() == 1 || a.cols() == 1;
  Tensor y(a.rows(), a.cols());
  if (vector_like) {
    const Tensor z = a.value().array() - a.value().maxCoeff();
    y = z.array().exp();
    y /= y.sum();
  } else {
    for (Index r = 0; r < a.rows(); ++r) {
      Eigen::RowVectorXd z = a.value().row(r).array() - a.value().row(r).maxCoeff();
      z = z.array().exp();
      y.row(r) = z / z.sum();
    }
  }
  const int ia = a.id();
  Tape& tape = tape_of(a);
  const int io = static_cast<int>(tape.size());
  return tape.record(std::move(y), {a}, [ia, io, vector_like](const Tensor& g, Tape& t) {
    const Tensor& y = t.value(io);
    Tensor ga(y.rows(), y.cols());
    if (vector_like) {
      const double dot = g.cwiseProduct(y).sum();
      ga = y.array() * (g.array() - dot);
    } else {
      for (Index r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        ga.row(r) = y.row(r).array() * (g.row(r).array() - dot);
      }
    }
    t.accumulate(ia, std::move(ga));
  });
}

Var index_select_rows(const Var& a, std::vector<Index> rows) {
  Tensor out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= a.rows())
      throw ShapeError("index_select_rows: index " + std::to_string(rows[k]) + " out of range");
    out.row(static_cast<Index>(k)) = a.value().row(rows[k]);
  }
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return tape_of(a).record(std::move(out), {a},
                           [ia, r, c, rows = std::move(rows)](const Tensor& g, Tape& t) {
                             Tensor ga = Tensor::Zero(r, c);
                             for (std::size_t k = 0; k < rows.size(); ++k)
                               ga.row(rows[k]) += g.row(static_cast<Index>(k));
                             t.accumulate(ia, std::move(ga));
                           });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_same_tape(x, w, "linear");
  require_same_tape(x, b, "linear");
  if (x.cols() != w.rows())
    throw ShapeError("linear: input " + shape_str(x.value()) + " vs weight " + shape_str(w.value()));
  if (b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("linear: bias must be 1x" + std::to_string(w.cols()));
  Tensor out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return tape_of(x).record(std::move(out), {x, w, b}, [ix, iw, ib](const Tensor& g, Tape& t) {
    if (t.needs_grad(ix)) t.accumulate(ix, Tensor(g * t.value(iw).transpose()));
    if (t.needs_grad(iw)) t.accumulate(iw, Tensor(t.value(ix).transpose() * g));
    if (t.needs_grad(ib)) t.accumulate(ib, Tensor(g.colwise().sum()));
  });
}

Var linear(const Var& x, const Var& w) { return matmul(x, w); }

// ---- clearing ---------------------------------------------------------------

Var shortfall(const Var& assets, const DerivedLiabilities& deriv, const ClearingOptions& opts) {
  if (assets.cols() != 1 || assets.rows() != deriv.total.size())
    throw ShapeError("shortfall: assets must be " + std::to_string(deriv.total.size()) + "x1");
  using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
  std::vector<Mask> trace;
  const Eigen::VectorXd a = assets.value();
  const ClearingResult res =
      detail::picard(a, deriv, opts, [&trace](const Mask& m) { trace.push_back(m); });
  const double loss = (deriv.total - res.clearing_vector).sum();

  const int ia = assets.id();
  const Tensor relative = deriv.relative;
  return tape_of(assets).record(
      Tensor::Constant(1, 1, loss), {assets},
      [ia, relative, trace = std::move(trace)](const Tensor& g, Tape& t) {
        // d loss / d p_K = -g; walk p_{k+1} = min(pi^T p_k + a, total) back to p_0 = total.
        const Index n = relative.rows();
        Eigen::VectorXd gp = Eigen::VectorXd::Constant(n, -g(0, 0));
        Eigen::VectorXd ga = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd u(n);
        for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
          u = it->select(gp, 0.0);
          ga += u;
          gp.noalias() = relative * u;
        }
        t.accumulate(ia, Tensor(ga));
      });
}

Var shortfall_unrolled(const Var& assets, const DerivedLiabilities& deriv,
                       const ClearingOptions& opts) {
  if (assets.cols() != 1 || assets.rows() != deriv.total.size())
    throw ShapeError("shortfall_unrolled: assets must be " + std::to_string(deriv.total.size()) +
                     "x1");
  Tape& tape = tape_of(assets);
  const Eigen::VectorXd a = assets.value();
  const ClearingResult res = clearing_vector(a, deriv, opts);
  const Var pi_t = tape.constant(deriv.relative.transpose());
  const Var total = tape.constant(deriv.total);
  Var p = total;
  for (int k = 0; k < res.iterations; ++k) p = minimum(add(matvec(pi_t, p), assets), total);
  return sub(sum(total), sum(p));
}

// ---- gradient checking -----------------------------------------------------

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, const GradCheckOptions& opts) {
  if (!(opts.h > 0)) throw std::invalid_argument("grad_check: h must be > 0");
  GradCheckResult out;
  {
    Tape tape;
    const Var xv = tape.variable(x);
    const Var y = f(tape, xv);
    out.analytic = tape.backward(y, std::span<const Var>(&xv, 1)).front();
  }
  auto eval = [&f](const Tensor& at) {
    Tape tape;
    return f(tape, tape.constant(at)).scalar();
  };
  out.numeric.resize(x.rows(), x.cols());
  Tensor probe = x;
  for (Index k = 0; k < x.size(); ++k) {
    const double x0 = probe.data()[k];
    probe.data()[k] = x0 + opts.h;
    const double fp = eval(probe);
    probe.data()[k] = x0 - opts.h;
    const double fm = eval(probe);
    probe.data()[k] = x0;
    out.numeric.data()[k] = (fp - fm) / (2 * opts.h);
  }
  for (Index k = 0; k < x.size(); ++k) {
    const double a = out.analytic.data()[k], n = out.numeric.data()[k];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), opts.floor});
    if (err > out.max_rel_error || out.worst_index < 0) {
      out.max_rel_error = std::max(out.max_rel_error, err);
      out.worst_index = k;
    }
  }
  return out;
}

}  // namespace sysrisk::ad
