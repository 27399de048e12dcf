#pragma once

// Test-only reference computations, independent of the library's solvers.

#include <Eigen/Dense>

#include <random>

#include "sysrisk/network.hpp"

namespace sysrisk::testing {

/// Greatest clearing vector by the fictitious default algorithm: guess the
/// default set, solve the linear system on it, grow the set until stable.
/// Requires strictly positive assets on defaulting cycles (solvable systems).
inline Eigen::Matrix<long double, Eigen::Dynamic, 1> fictitious_default_clearing(
    const FinancialNetwork& net) {
  using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const auto n = net.size();
  const LMat l = net.liabilities().cast<long double>();
  const LVec a = net.assets().cast<long double>();
  const LVec total = l.rowwise().sum();
  LMat pi = LMat::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    if (total(i) > 0) pi.row(i) = l.row(i) / total(i);

  std::vector<bool> def(static_cast<std::size_t>(n), false);
  LVec p = total;
  for (int round = 0; round <= n; ++round) {
    // p_i = total_i for solvent i; p_D = a_D + pi^T p restricted, solved jointly
    LMat sys = LMat::Identity(n, n);
    LVec rhs = total;
    for (Index i = 0; i < n; ++i) {
      if (!def[static_cast<std::size_t>(i)]) continue;
      sys.row(i).setZero();
      sys(i, i) = 1;
      for (Index j = 0; j < n; ++j) sys(i, j) -= pi(j, i);
      rhs(i) = a(i);
    }
    p = sys.fullPivLu().solve(rhs);
    bool changed = false;
    const LVec inflow = pi.transpose() * p + a;
    for (Index i = 0; i < n; ++i)
      if (!def[static_cast<std::size_t>(i)] && inflow(i) < total(i) - 1e-15L * (1 + total(i))) {
        def[static_cast<std::size_t>(i)] = true;
        changed = true;
      }
    if (!changed) break;
  }
  return p;
}

/// Random network with Bernoulli(p_edge) links of size U(0, max_size] and
/// assets U[asset_lo, asset_hi].
inline FinancialNetwork random_network(std::mt19937_64& rng, Index n, double p_edge,
                                       double max_size, double asset_lo, double asset_hi) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Eigen::VectorXd a(n);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    a(i) = asset_lo + (asset_hi - asset_lo) * u01(rng);
    for (Index j = 0; j < n; ++j)
      if (i != j && u01(rng) < p_edge) l(i, j) = max_size * (1.0 - u01(rng));
  }
  return FinancialNetwork(a, l);
}

/// Nodes 0 and 1 each owe one unit to node 2; no assets.
inline FinancialNetwork remark_network() {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(3, 3);
  l(0, 2) = 1;
  l(1, 2) = 1;
  return FinancialNetwork(Eigen::VectorXd::Zero(3), l);
}

inline FinancialNetwork two_node_network() {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 2);
  l(0, 1) = 12;
  return FinancialNetwork(Eigen::Vector2d(1, 2), l);
}

}  // namespace sysrisk::testing
