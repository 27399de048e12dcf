#pragma once

// Eisenberg-Noe clearing on a single network realization.
//
// Everything here is templated on the scalar type so the same code runs in
// double (production) and long double (test reference).  Nodes are 0-based.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sysrisk {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

class NetworkError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Asset vector a and liability matrix l, where l(i, j) is owed by i to j.
template <typename Scalar>
class BasicFinancialNetwork {
 public:
  BasicFinancialNetwork() = default;

  BasicFinancialNetwork(Vector<Scalar> assets, Matrix<Scalar> liabilities)
      : assets_(std::move(assets)), liabilities_(std::move(liabilities)) {
    const Index n = assets_.size();
    if (n < 1) throw NetworkError("network must have at least one node");
    if (liabilities_.rows() != n || liabilities_.cols() != n)
      throw NetworkError("liability matrix must be " + std::to_string(n) + "x" +
                         std::to_string(n));
    for (Index i = 0; i < n; ++i) {
      if (!std::isfinite(static_cast<double>(assets_(i))) || assets_(i) < Scalar(0))
        throw NetworkError("asset " + std::to_string(i) + " must be finite and >= 0");
      if (liabilities_(i, i) != Scalar(0))
        throw NetworkError("self liability at node " + std::to_string(i));
      for (Index j = 0; j < n; ++j) {
        const Scalar v = liabilities_(i, j);
        if (!std::isfinite(static_cast<double>(v)) || v < Scalar(0))
          throw NetworkError("liability (" + std::to_string(i) + "," + std::to_string(j) +
                             ") must be finite and >= 0");
      }
    }
  }

  Index size() const { return assets_.size(); }
  const Vector<Scalar>& assets() const { return assets_; }
  const Matrix<Scalar>& liabilities() const { return liabilities_; }

  /// Same liabilities, different assets (e.g. after a bailout injection).
  BasicFinancialNetwork with_assets(Vector<Scalar> assets) const {
    return BasicFinancialNetwork(std::move(assets), liabilities_);
  }

  template <typename Other>
  BasicFinancialNetwork<Other> cast() const {
    return BasicFinancialNetwork<Other>(assets_.template cast<Other>(),
                                        liabilities_.template cast<Other>());
  }

  friend bool operator==(const BasicFinancialNetwork& a, const BasicFinancialNetwork& b) {
    return a.size() == b.size() && a.assets_ == b.assets_ && a.liabilities_ == b.liabilities_;
  }

 private:
  Vector<Scalar> assets_;
  Matrix<Scalar> liabilities_;
};

using FinancialNetwork = BasicFinancialNetwork<double>;

/// Row sums (total obligations) and the row-normalized relative liability matrix.
template <typename Scalar>
struct BasicDerivedLiabilities {
  Vector<Scalar> total;
  Matrix<Scalar> relative;
};

using DerivedLiabilities = BasicDerivedLiabilities<double>;

template <typename Scalar>
BasicDerivedLiabilities<Scalar> derive_liabilities(const BasicFinancialNetwork<Scalar>& net) {
  BasicDerivedLiabilities<Scalar> d;
  d.total = net.liabilities().rowwise().sum();
  d.relative = Matrix<Scalar>::Zero(net.size(), net.size());
  for (Index i = 0; i < net.size(); ++i)
    if (d.total(i) > Scalar(0)) d.relative.row(i) = net.liabilities().row(i) / d.total(i);
  return d;
}

/// Phi(p) = min(pi^T p + a, total), component-wise.
template <typename DerivedP, typename DerivedA, typename Scalar>
Vector<Scalar> phi(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedA>& assets,
                   const BasicDerivedLiabilities<Scalar>& deriv) {
  const Index n = deriv.total.size();
  if (p.size() != n || assets.size() != n)
    throw NetworkError("phi: dimension mismatch (expected " + std::to_string(n) + ")");
  Vector<Scalar> inflow = deriv.relative.transpose() * p + assets;
  return inflow.cwiseMin(deriv.total);
}

struct ClearingOptions {
  double tol = 1e-10;
  /// Zero selects max(200, 4N).
  int max_iter = 0;
  bool throw_on_nonconvergence = true;
};

inline int default_max_iterations(Index n) {
  return std::max<int>(200, static_cast<int>(4 * n));
}

template <typename Scalar>
struct BasicClearingResult {
  Vector<Scalar> clearing_vector;
  Scalar residual = Scalar(0);
  int iterations = 0;
  bool converged = false;
};

using ClearingResult = BasicClearingResult<double>;

class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(double residual, int iterations)
      : std::runtime_error("clearing did not converge: residual " + std::to_string(residual) +
                           " after " + std::to_string(iterations) + " iterations"),
        residual_(residual),
        iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

namespace detail {

// Picard iteration from p = total.  `on_step(mask)` is called once per
// accepted step with the branch mask (true where the payment-capacity branch
// pi^T p + a was selected, ties included).
template <typename Scalar, typename DerivedA, typename OnStep>
BasicClearingResult<Scalar> picard(const Eigen::MatrixBase<DerivedA>& assets,
                                   const BasicDerivedLiabilities<Scalar>& deriv,
                                   const ClearingOptions& opts, OnStep&& on_step) {
  const Index n = deriv.total.size();
  if (assets.size() != n) throw NetworkError("clearing: asset dimension mismatch");
  if (!(opts.tol > 0)) throw std::invalid_argument("clearing: tol must be > 0");
  const int max_iter = opts.max_iter > 0 ? opts.max_iter : default_max_iterations(n);

  BasicClearingResult<Scalar> out;
  Vector<Scalar> p = deriv.total;
  Vector<Scalar> inflow(n);
  Eigen::Array<bool, Eigen::Dynamic, 1> mask(n);
  for (int k = 0;; ++k) {
    inflow.noalias() = deriv.relative.transpose() * p;
    inflow += assets;
    mask = inflow.array() <= deriv.total.array();
    Vector<Scalar> next = inflow.cwiseMin(deriv.total);
    const Scalar residual = n > 0 ? (next - p).cwiseAbs().maxCoeff() : Scalar(0);
    if (residual <= Scalar(opts.tol)) {
      out.clearing_vector = std::move(p);
      out.residual = residual;
      out.iterations = k;
      out.converged = true;
      return out;
    }
    if (k == max_iter) {
      out.clearing_vector = std::move(p);
      out.residual = residual;
      out.iterations = k;
      out.converged = false;
      if (opts.throw_on_nonconvergence)
        throw NonConvergence(static_cast<double>(residual), k);
      return out;
    }
    on_step(mask);
    p = std::move(next);
  }
}

}  // namespace detail

/// Greatest clearing vector by monotone iteration p0 = total, p_{k+1} = Phi(p_k).
///
/// Returns the iterate p_k whose residual |p_k - Phi(p_k)|_inf was measured
/// to be within `tol`; `iterations` is k.
template <typename Scalar, typename DerivedA>
BasicClearingResult<Scalar> clearing_vector(const Eigen::MatrixBase<DerivedA>& assets,
                                            const BasicDerivedLiabilities<Scalar>& deriv,
                                            const ClearingOptions& opts = {}) {
  return detail::picard(assets, deriv, opts, [](const auto&) {});
}

template <typename Scalar>
BasicClearingResult<Scalar> clearing_vector(const BasicFinancialNetwork<Scalar>& net,
                                            const ClearingOptions& opts = {}) {
  return clearing_vector(net.assets(), derive_liabilities(net), opts);
}

/// Shortfall sum_i (total_i - p_i).
template <typename Scalar>
Scalar aggregate_loss(const BasicDerivedLiabilities<Scalar>& deriv,
                      const BasicClearingResult<Scalar>& clearing) {
  return (deriv.total - clearing.clearing_vector).sum();
}

template <typename Scalar>
Scalar aggregate_loss(const BasicFinancialNetwork<Scalar>& net,
                      const BasicClearingResult<Scalar>& clearing) {
  return aggregate_loss(derive_liabilities(net), clearing);
}

/// Convenience: clear `net` with extra assets `injection` and return the shortfall.
template <typename Scalar, typename DerivedY>
Scalar shortfall(const BasicFinancialNetwork<Scalar>& net, const Eigen::MatrixBase<DerivedY>& injection,
                 const ClearingOptions& opts = {}) {
  const auto deriv = derive_liabilities(net);
  Vector<Scalar> a = net.assets() + injection;
  return aggregate_loss(deriv, clearing_vector(a, deriv, opts));
}

template <typename Scalar>
Scalar shortfall(const BasicFinancialNetwork<Scalar>& net, const ClearingOptions& opts = {}) {
  return aggregate_loss(net, clearing_vector(net, opts));
}

/// Nodes j != i with l(j, i) != 0, i.e. the debtors of i.
template <typename Scalar>
std::vector<Index> neighborhood(const BasicFinancialNetwork<Scalar>& net, Index i) {
  if (i < 0 || i >= net.size()) throw NetworkError("neighborhood: node index out of range");
  std::vector<Index> out;
  for (Index j = 0; j < net.size(); ++j)
    if (j != i && net.liabilities()(j, i) != Scalar(0)) out.push_back(j);
  return out;
}

/// Incoming nominal liabilities sum_j l(j, i).
template <typename Scalar>
Vector<Scalar> incoming_liabilities(const BasicFinancialNetwork<Scalar>& net) {
  return net.liabilities().colwise().sum().transpose();
}

/// A bijection sigma on {0..N-1}; mapping()[i] = sigma(i).
class Permutation {
 public:
  explicit Permutation(std::vector<Index> mapping);
  static Permutation identity(Index n);
  static Permutation random(Index n, std::mt19937_64& rng);

  Index size() const { return static_cast<Index>(mapping_.size()); }
  Index operator()(Index i) const { return mapping_[static_cast<std::size_t>(i)]; }
  const std::vector<Index>& mapping() const { return mapping_; }
  Permutation inverse() const;

  /// sigma(v)_i = v_{sigma^{-1}(i)}; rows of a matrix are moved likewise.
  template <typename Derived>
  Matrix<typename Derived::Scalar> apply_rows(const Eigen::MatrixBase<Derived>& v) const {
    check_size(v.rows());
    Matrix<typename Derived::Scalar> out(v.rows(), v.cols());
    for (Index i = 0; i < size(); ++i) out.row((*this)(i)) = v.row(i);
    return out;
  }

  template <typename Scalar>
  Vector<Scalar> apply(const Vector<Scalar>& v) const {
    return apply_rows(v);
  }

  /// sigma(l)_{ij} = l_{sigma^{-1}(i), sigma^{-1}(j)}.
  template <typename Scalar>
  Matrix<Scalar> apply_both(const Matrix<Scalar>& m) const {
    check_size(m.rows());
    check_size(m.cols());
    Matrix<Scalar> out(m.rows(), m.cols());
    for (Index i = 0; i < size(); ++i)
      for (Index j = 0; j < size(); ++j) out((*this)(i), (*this)(j)) = m(i, j);
    return out;
  }

 private:
  void check_size(Index n) const {
    if (n != size())
      throw NetworkError("permutation of length " + std::to_string(size()) +
                         " applied to dimension " + std::to_string(n));
  }
  std::vector<Index> mapping_;
};

template <typename Scalar>
BasicFinancialNetwork<Scalar> permute_network(const BasicFinancialNetwork<Scalar>& net,
                                              const Permutation& perm) {
  if (perm.size() != net.size()) throw NetworkError("permute_network: length mismatch");
  return BasicFinancialNetwork<Scalar>(perm.apply(net.assets()),
                                       perm.apply_both(net.liabilities()));
}

}  // namespace sysrisk
