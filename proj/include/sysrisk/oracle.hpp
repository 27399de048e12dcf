#pragma once

// Exhaustive ground truth for tiny networks: the best split of capital c
// among all compositions of `resolution` equal units.

#include <cstddef>
#include <string>

#include "sysrisk/network.hpp"

namespace sysrisk {

struct OracleResult {
  Eigen::VectorXd best_weights;
  double best_loss = 0;
  int grid_resolution = 0;
  std::size_t evaluations = 0;
};

inline constexpr Index kOracleMaxNodes = 6;
inline constexpr std::size_t kOracleMaxPoints = 50'000'000;

/// Number of compositions of `resolution` into n non-negative parts.
std::size_t simplex_grid_size(Index n, int resolution);

/// Minimizes the shortfall over the simplex grid; ties go to the
/// lexicographically smallest weight vector.
OracleResult brute_force_allocation(const FinancialNetwork& net, double c, int resolution,
                                    const ClearingOptions& opts = {});

enum class ToyKind { kCascade, kStar };

std::string to_string(ToyKind kind);
ToyKind toy_kind_from_string(const std::string& name);

struct ToyOptimum {
  Eigen::VectorXd weights;
  double loss = 0;
};

/// Optimal allocation of c <= N-1 on the cascade starting at node 0 (all
/// capital to the start node) or the star centred at node 0 (equal split over
/// the debtors). The loss is obtained by clearing the bailed-out network.
ToyOptimum closed_form_toy_optimum(ToyKind kind, Index n, double c);

}  // namespace sysrisk
