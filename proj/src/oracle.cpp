#include "sysrisk/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sysrisk/scenarios.hpp"

namespace sysrisk {

std::size_t simplex_grid_size(Index n, int resolution) {
  // C(resolution + n - 1, n - 1), saturating
  long double v = 1;
  for (Index k = 1; k < n; ++k) {
    v = v * static_cast<long double>(resolution + k) / static_cast<long double>(k);
    if (v > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2))
      return std::numeric_limits<std::size_t>::max();
  }
  return static_cast<std::size_t>(std::llround(v));
}

OracleResult brute_force_allocation(const FinancialNetwork& net, double c, int resolution,
                                    const ClearingOptions& opts) {
  const Index n = net.size();
  if (n > kOracleMaxNodes)
    throw std::invalid_argument("oracle: N=" + std::to_string(n) + " exceeds " +
                                std::to_string(kOracleMaxNodes));
  if (resolution < 1) throw std::invalid_argument("oracle: resolution must be >= 1");
  if (!(c >= 0) || !std::isfinite(c)) throw std::invalid_argument("oracle: capital must be finite and >= 0");
  if (simplex_grid_size(n, resolution) > kOracleMaxPoints)
    throw std::invalid_argument("oracle: grid of resolution " + std::to_string(resolution) + " is too large");

  const auto deriv = derive_liabilities(net);
  OracleResult best;
  best.grid_resolution = resolution;
  best.best_loss = std::numeric_limits<double>::infinity();

  // Lexicographic enumeration from (0, ..., 0, R) upward; a later point
  // replaces the incumbent only if strictly better.
  std::vector<int> units(static_cast<std::size_t>(n), 0);
  units.back() = resolution;
  Eigen::VectorXd w(n);
  for (;;) {
    for (Index i = 0; i < n; ++i) w(i) = units[static_cast<std::size_t>(i)] / static_cast<double>(resolution);
    const auto res = clearing_vector(Eigen::VectorXd(net.assets() + c * w), deriv, opts);
    const double loss = aggregate_loss(deriv, res);
    ++best.evaluations;
    if (loss < best.best_loss) {
      best.best_loss = loss;
      best.best_weights = w;
    }
    // next composition in lexicographic order
    Index j = n - 2;
    while (j >= 0) {
      // increment units[j] if there is mass to the right of it
      int rest = 0;
      for (Index k = j + 1; k < n; ++k) rest += units[static_cast<std::size_t>(k)];
      if (rest > 0) {
        ++units[static_cast<std::size_t>(j)];
        for (Index k = j + 1; k < n; ++k) units[static_cast<std::size_t>(k)] = 0;
        units.back() = rest - 1;
        break;
      }
      --j;
    }
    if (j < 0) break;
  }
  return best;
}

std::string to_string(ToyKind kind) { return kind == ToyKind::kCascade ? "cascade" : "star"; }

ToyKind toy_kind_from_string(const std::string& name) {
  if (name == "cascade") return ToyKind::kCascade;
  if (name == "star") return ToyKind::kStar;
  throw std::invalid_argument("unknown toy network kind '" + name + "'");
}

ToyOptimum closed_form_toy_optimum(ToyKind kind, Index n, double c) {
  if (n < 2) throw std::invalid_argument("toy optimum: N must be at least 2");
  if (!(c >= 0) || c > static_cast<double>(n - 1))
    throw std::invalid_argument("toy optimum: capital must lie in [0, N-1]");
  ToyOptimum out;
  out.weights = Eigen::VectorXd::Zero(n);
  FinancialNetwork net = kind == ToyKind::kCascade ? cascade_network(n, 0) : star_network(n, 0);
  if (kind == ToyKind::kCascade) {
    out.weights(0) = 1.0;
  } else {
    out.weights.tail(n - 1).setConstant(1.0 / static_cast<double>(n - 1));
  }
  out.loss = shortfall(net, c * out.weights);
  return out;
}

}  // namespace sysrisk
