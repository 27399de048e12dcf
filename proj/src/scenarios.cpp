#include "sysrisk/scenarios.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sysrisk {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream used by CPf for its single shared liability matrix.
constexpr std::uint64_t kTopologyStream = ~std::uint64_t{0};

double uniform01(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
}

}  // namespace

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::kCascadeStar: return "cascade_star";
    case GeneratorKind::kErdosRenyi: return "erdos_renyi";
    case GeneratorKind::kCorePeriphery: return "core_periphery";
    case GeneratorKind::kCorePeripheryFixed: return "core_periphery_fixed";
  }
  return "unknown";
}

GeneratorKind generator_kind_from_string(const std::string& name) {
  for (auto k : {GeneratorKind::kCascadeStar, GeneratorKind::kErdosRenyi,
                 GeneratorKind::kCorePeriphery, GeneratorKind::kCorePeripheryFixed})
    if (to_string(k) == name) return k;
  if (name == "er") return GeneratorKind::kErdosRenyi;
  if (name == "cp") return GeneratorKind::kCorePeriphery;
  if (name == "cpf") return GeneratorKind::kCorePeripheryFixed;
  throw std::invalid_argument("unknown generator kind '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (n_nodes < 1) throw std::invalid_argument("n_nodes must be positive");
  if (kind == GeneratorKind::kCascadeStar) {
    if (n_nodes < 3) throw std::invalid_argument("cascade_star needs n_nodes >= 3");
    return;
  }
  if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");
  if (!(beta_alpha > 0 && beta_beta > 0))
    throw std::invalid_argument("Beta parameters must be positive");
  if (!(asset_scale >= 0 && asset_scale_large >= 0 && asset_floor >= 0))
    throw std::invalid_argument("asset scales and floor must be non-negative");
  if (kind == GeneratorKind::kErdosRenyi) {
    require_probability(edge_probability, "edge_probability");
    if (!(edge_size > 0)) throw std::invalid_argument("edge_size must be positive");
    return;
  }
  if (n_large < 0 || n_large > n_nodes)
    throw std::invalid_argument("core-periphery group sizes must be non-negative and sum to n_nodes");
  require_probability(p_large_large, "p_large_large");
  require_probability(p_large_small, "p_large_small");
  require_probability(p_small_large, "p_small_large");
  require_probability(p_small_small, "p_small_small");
  if (!(size_large_large > 0 && size_mixed > 0 && size_small_small > 0))
    throw std::invalid_argument("liability sizes must be positive");
  if (!(copula_correlation >= 0.0 && copula_correlation < 1.0))
    throw std::invalid_argument("copula_correlation must lie in [0, 1)");
}

std::map<std::string, double> GeneratorConfig::parameters() const {
  std::map<std::string, double> p{{"n_nodes", static_cast<double>(n_nodes)}};
  if (kind == GeneratorKind::kCascadeStar) return p;
  p["n_samples"] = static_cast<double>(n_samples);
  p["beta_alpha"] = beta_alpha;
  p["beta_beta"] = beta_beta;
  p["asset_scale"] = asset_scale;
  p["asset_floor"] = asset_floor;
  if (kind == GeneratorKind::kErdosRenyi) {
    p["edge_probability"] = edge_probability;
    p["edge_size"] = edge_size;
    return p;
  }
  p["asset_scale_large"] = asset_scale_large;
  p["n_large"] = static_cast<double>(n_large);
  p["p_large_large"] = p_large_large;
  p["p_large_small"] = p_large_small;
  p["p_small_large"] = p_small_large;
  p["p_small_small"] = p_small_small;
  p["size_large_large"] = size_large_large;
  p["size_mixed"] = size_mixed;
  p["size_small_small"] = size_small_small;
  p["copula_correlation"] = copula_correlation;
  return p;
}

// ---- ScenarioSet --------------------------------------------------------------

ScenarioSet::ScenarioSet(std::vector<FinancialNetwork> networks)
    : ScenarioSet(std::move(networks), Eigen::VectorXd()) {}

ScenarioSet::ScenarioSet(std::vector<FinancialNetwork> networks, Eigen::VectorXd weights)
    : networks_(std::move(networks)), weights_(std::move(weights)) {
  const auto n = static_cast<Index>(networks_.size());
  if (weights_.size() == 0 && n > 0) weights_ = Eigen::VectorXd::Constant(n, 1.0 / n);
  if (weights_.size() != n) throw std::invalid_argument("ScenarioSet: weight count mismatch");
  if (n == 0) return;
  if ((weights_.array() < 0).any() || std::abs(weights_.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("ScenarioSet: weights must be a probability vector");
  for (const auto& net : networks_)
    if (net.size() != networks_.front().size())
      throw std::invalid_argument("ScenarioSet: networks must share the node count");
}

ScenarioSet ScenarioSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<FinancialNetwork> nets;
  Eigen::VectorXd w(static_cast<Index>(indices.size()));
  nets.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    nets.push_back(networks_.at(indices[k]));
    w(static_cast<Index>(k)) = weights_(static_cast<Index>(indices[k]));
  }
  if (w.size() > 0) w /= w.sum();
  ScenarioSet out(std::move(nets), std::move(w));
  out.generator = generator;
  out.seed = seed;
  out.parameters = parameters;
  return out;
}

// ---- sampling -----------------------------------------------------------------

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

double sample_gamma(double shape, std::mt19937_64& rng) {
  if (!(shape > 0)) throw std::invalid_argument("sample_gamma: shape must be positive");
  if (shape < 1.0) {
    // Gamma(k) = Gamma(k + 1) * U^(1/k)
    const double u = uniform01(rng);
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia & Tsang (2000)
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    double x, v;
    do {
      x = normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(double alpha, double beta, std::mt19937_64& rng) {
  if (!(alpha > 0 && beta > 0)) throw std::invalid_argument("sample_beta: parameters must be positive");
  for (;;) {
    const double x = sample_gamma(alpha, rng);
    const double y = sample_gamma(beta, rng);
    const double s = x + y;
    if (s > 0) {
      const double b = x / s;
      if (b > 0.0 && b < 1.0) return b;
    }
  }
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double beta_quantile(double alpha, double beta, double u) {
  return boost::math::ibeta_inv(alpha, beta, u);
}

Eigen::VectorXd sample_gaussian_copula(Index n, double rho, std::mt19937_64& rng) {
  if (!(rho >= 0.0 && rho < 1.0))
    throw std::invalid_argument("sample_gaussian_copula: rho must lie in [0, 1)");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double common = normal(rng);
  const double w0 = std::sqrt(rho), w1 = std::sqrt(1.0 - rho);
  Eigen::VectorXd u(n);
  for (Index i = 0; i < n; ++i) u(i) = standard_normal_cdf(w0 * common + w1 * normal(rng));
  return u;
}

// ---- generators ---------------------------------------------------------------

FinancialNetwork cascade_network(Index n, Index start) {
  if (n < 2 || start < 0 || start >= n) throw std::invalid_argument("cascade_network: bad arguments");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  const Index skip = (start + n - 1) % n;
  for (Index j = 0; j < n; ++j)
    if (j != skip) l(j, (j + 1) % n) = static_cast<double>(n - 1);
  return FinancialNetwork(Eigen::VectorXd::Zero(n), l);
}

FinancialNetwork star_network(Index n, Index center) {
  if (n < 2 || center < 0 || center >= n) throw std::invalid_argument("star_network: bad arguments");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Index j = 0; j < n; ++j)
    if (j != center) l(j, center) = 1.0;
  return FinancialNetwork(Eigen::VectorXd::Zero(n), l);
}

ScenarioSet gen_cascade_star(Index n) {
  if (n < 3) throw std::invalid_argument("gen_cascade_star: N must be at least 3");
  std::vector<FinancialNetwork> nets;
  nets.reserve(static_cast<std::size_t>(2 * n));
  for (Index i = 0; i < n; ++i) {
    nets.push_back(cascade_network(n, i));
    nets.push_back(star_network(n, i));
  }
  ScenarioSet set(std::move(nets));
  set.generator = to_string(GeneratorKind::kCascadeStar);
  set.parameters = {{"n_nodes", static_cast<double>(n)}};
  return set;
}

ScenarioSet gen_erdos_renyi(const GeneratorConfig& cfg) {
  if (cfg.kind != GeneratorKind::kErdosRenyi)
    throw std::invalid_argument("gen_erdos_renyi: config kind is " + to_string(cfg.kind));
  cfg.validate();
  const Index n = cfg.n_nodes;
  std::vector<FinancialNetwork> nets;
  nets.reserve(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    auto rng = stream_rng(cfg.seed, s);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (i != j && uniform01(rng) < cfg.edge_probability) l(i, j) = cfg.edge_size;
    Eigen::VectorXd a(n);
    for (Index i = 0; i < n; ++i)
      a(i) = cfg.asset_floor + cfg.asset_scale * sample_beta(cfg.beta_alpha, cfg.beta_beta, rng);
    nets.emplace_back(std::move(a), std::move(l));
  }
  ScenarioSet set(std::move(nets));
  set.generator = to_string(cfg.kind);
  set.seed = cfg.seed;
  set.parameters = cfg.parameters();
  return set;
}

namespace {

Eigen::MatrixXd core_periphery_liabilities(const GeneratorConfig& cfg, std::mt19937_64& rng) {
  const Index n = cfg.n_nodes;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const bool li = i < cfg.n_large;
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool lj = j < cfg.n_large;
      const double p = li ? (lj ? cfg.p_large_large : cfg.p_large_small)
                          : (lj ? cfg.p_small_large : cfg.p_small_small);
      const double size = li && lj ? cfg.size_large_large
                                   : (li || lj ? cfg.size_mixed : cfg.size_small_small);
      if (uniform01(rng) < p) l(i, j) = size;
    }
  }
  return l;
}

Eigen::VectorXd core_periphery_assets(const GeneratorConfig& cfg, std::mt19937_64& rng) {
  const Eigen::VectorXd u = sample_gaussian_copula(cfg.n_nodes, cfg.copula_correlation, rng);
  Eigen::VectorXd a(cfg.n_nodes);
  for (Index i = 0; i < cfg.n_nodes; ++i) {
    const double scale = i < cfg.n_large ? cfg.asset_scale_large : cfg.asset_scale;
    a(i) = cfg.asset_floor + scale * beta_quantile(cfg.beta_alpha, cfg.beta_beta, u(i));
  }
  return a;
}

}  // namespace

ScenarioSet gen_core_periphery(const GeneratorConfig& cfg, bool fixed_topology) {
  if (cfg.kind != GeneratorKind::kCorePeriphery && cfg.kind != GeneratorKind::kCorePeripheryFixed)
    throw std::invalid_argument("gen_core_periphery: config kind is " + to_string(cfg.kind));
  cfg.validate();
  Eigen::MatrixXd shared;
  if (fixed_topology) {
    auto topo = stream_rng(cfg.seed, kTopologyStream);
    shared = core_periphery_liabilities(cfg, topo);
  }
  std::vector<FinancialNetwork> nets;
  nets.reserve(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    auto rng = stream_rng(cfg.seed, s);
    Eigen::MatrixXd l = fixed_topology ? shared : core_periphery_liabilities(cfg, rng);
    nets.emplace_back(core_periphery_assets(cfg, rng), std::move(l));
  }
  ScenarioSet set(std::move(nets));
  set.generator = to_string(fixed_topology ? GeneratorKind::kCorePeripheryFixed
                                           : GeneratorKind::kCorePeriphery);
  set.seed = cfg.seed;
  set.parameters = cfg.parameters();
  return set;
}

ScenarioSet generate(const GeneratorConfig& cfg) {
  switch (cfg.kind) {
    case GeneratorKind::kCascadeStar: return gen_cascade_star(cfg.n_nodes);
    case GeneratorKind::kErdosRenyi: return gen_erdos_renyi(cfg);
    case GeneratorKind::kCorePeriphery: return gen_core_periphery(cfg, false);
    case GeneratorKind::kCorePeripheryFixed: return gen_core_periphery(cfg, true);
  }
  throw std::invalid_argument("generate: unknown kind");
}

// ---- split --------------------------------------------------------------------

SplitSets split(const ScenarioSet& set, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must be non-negative and sum to 1");
  const std::size_t n = set.size();
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
  const std::size_t n_test = n - std::min(n, n_train) - n_val;
  if ((f.train > 0 && n_train == 0) || (f.val > 0 && n_val == 0) || (f.test > 0 && n_test == 0))
    throw std::invalid_argument("split: a partition with positive fraction would be empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(from),
                                 order.begin() + static_cast<std::ptrdiff_t>(from + count));
    return set.subset(idx);
  };
  return {take(0, n_train), take(n_train, n_val), take(n_train + n_val, n_test)};
}

}  // namespace sysrisk
