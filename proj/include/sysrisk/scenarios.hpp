#pragma once

// Seeded scenario generators and dataset splitting.
//
// Every sample draws from its own RNG stream derived from (seed, sample
// index), so growing n_samples never perturbs earlier samples.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sysrisk/network.hpp"

namespace sysrisk {

enum class GeneratorKind { kCascadeStar, kErdosRenyi, kCorePeriphery, kCorePeripheryFixed };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& name);

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::kErdosRenyi;
  Index n_nodes = 100;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 0;

  // Erdos-Renyi
  double edge_probability = 0.4;
  double edge_size = 1.0;

  // asset margins: scale * Beta(alpha, beta) + floor
  double beta_alpha = 2.0;
  double beta_beta = 5.0;
  double asset_scale = 10.0;
  double asset_scale_large = 50.0;
  double asset_floor = 0.0;

  // core-periphery: nodes [0, n_large) are large banks
  Index n_large = 10;
  double p_large_large = 0.7;
  double p_large_small = 0.3;
  double p_small_large = 0.3;
  double p_small_small = 0.1;
  double size_large_large = 10.0;
  double size_mixed = 2.0;
  double size_small_small = 1.0;
  double copula_correlation = 0.5;

  void validate() const;
  /// Flat name -> value view for metadata sidecars.
  std::map<std::string, double> parameters() const;
};

/// A finite weighted ensemble standing in for the law of (A, L).
class ScenarioSet {
 public:
  ScenarioSet() = default;
  /// Uniform weights.
  explicit ScenarioSet(std::vector<FinancialNetwork> networks);
  ScenarioSet(std::vector<FinancialNetwork> networks, Eigen::VectorXd weights);

  std::size_t size() const { return networks_.size(); }
  bool empty() const { return networks_.empty(); }
  /// Common node count (0 for an empty set).
  Index n_nodes() const { return networks_.empty() ? 0 : networks_.front().size(); }
  const std::vector<FinancialNetwork>& networks() const { return networks_; }
  const FinancialNetwork& operator[](std::size_t k) const { return networks_[k]; }
  const Eigen::VectorXd& weights() const { return weights_; }

  /// Sub-ensemble with weights renormalized to sum to one.
  ScenarioSet subset(const std::vector<std::size_t>& indices) const;

  std::string generator;
  std::uint64_t seed = 0;
  std::map<std::string, double> parameters;

 private:
  std::vector<FinancialNetwork> networks_;
  Eigen::VectorXd weights_;
};

/// Independent 64-bit stream for (seed, stream index).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

double sample_gamma(double shape, std::mt19937_64& rng);
double sample_beta(double alpha, double beta, std::mt19937_64& rng);
/// Uniforms whose normal scores have pairwise correlation rho.
Eigen::VectorXd sample_gaussian_copula(Index n, double rho, std::mt19937_64& rng);
double standard_normal_cdf(double x);
/// Inverse of the Beta(alpha, beta) distribution function.
double beta_quantile(double alpha, double beta, double u);

/// Chain of N-1 liabilities of size N-1 from `start` around the ring,
/// skipping the edge into `start`.
FinancialNetwork cascade_network(Index n, Index start);
/// Every node except `center` owes one unit to `center`.
FinancialNetwork star_network(Index n, Index center);

/// The 2N stylised networks: cascade_i and star_i for every node i.
ScenarioSet gen_cascade_star(Index n);
ScenarioSet gen_erdos_renyi(const GeneratorConfig& cfg);
ScenarioSet gen_core_periphery(const GeneratorConfig& cfg, bool fixed_topology);
/// Dispatch on cfg.kind.
ScenarioSet generate(const GeneratorConfig& cfg);

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct SplitSets {
  ScenarioSet train;
  ScenarioSet val;
  ScenarioSet test;
};

SplitSets split(const ScenarioSet& set, const SplitFractions& fractions, std::uint64_t seed);

}  // namespace sysrisk
