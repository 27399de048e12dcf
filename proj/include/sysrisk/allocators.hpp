#pragma once

// Bailout allocators: maps from one network realization to a point on the
// capital simplex. Learned models produce per-node scores that go through a
// softmax; benchmark rules compute their weights directly.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sysrisk/autodiff.hpp"
#include "sysrisk/network.hpp"

namespace sysrisk {

enum class ModelKind {
  kNone,
  kUniform,
  kDefault,
  kLevel1,
  kConstant,
  kLinear,
  kFnn,
  kFnnL,
  kGnn,
  kPenn,
  kXpenn,
};

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Which per-node quantities enter the feature matrix.
enum class FeatureMode {
  kZero,     // no informative columns (only padding / IDs)
  kAssets,   // a
  kBalance,  // a, incoming, outgoing
};

std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::kXpenn;
  /// Required for Constant, FNN and FNN(L); 0 means "any N" elsewhere.
  Index n_nodes = 0;

  FeatureMode features = FeatureMode::kBalance;
  bool use_ids = false;
  /// Zero-pad the feature matrix to this many columns (0 = no padding).
  Index feature_width = 0;
  /// Features are divided by this constant.
  double feature_scale = 1.0;

  // FNN / FNN(L)
  std::vector<Index> hidden{100, 100};

  // GNN: gnn_layers SAGEConv rounds with hidden width gnn_width and a
  // scalar output on the last round.
  Index gnn_layers = 5;
  Index gnn_width = 10;
  bool gnn_bias = true;

  // PENN / XPENN sub-networks. Each is an MLP given by its hidden widths;
  // phi and alpha output repr_width channels, psi outputs psi_width, rho
  // outputs the scalar score.
  Index repr_width = 10;
  Index psi_width = 10;
  std::vector<Index> phi_hidden{};
  std::vector<Index> alpha_hidden{};
  std::vector<Index> rho_hidden{10, 10};
  std::vector<Index> psi_hidden{10};
  /// Sigmoid on the phi, alpha and psi outputs, bounding the pooled sums.
  bool squash_representations = true;

  /// Default rule: node i defaults if p_i < total_i - default_tol.
  double default_tol = 1e-9;

  std::uint64_t seed = 0;

  bool learned() const;
  void validate() const;
};

/// Architecture settings of the stylised cascade/star experiment.
ModelConfig toy_model_config(ModelKind kind, Index n_nodes);
/// Architecture settings of the random-network experiments.
ModelConfig default_model_config(ModelKind kind, Index n_nodes);

struct NamedTensor {
  std::string name;
  ad::Tensor value;
};

/// Ordered collection of named parameter tensors.
class ParameterSet {
 public:
  void add(std::string name, ad::Tensor value);
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  NamedTensor& operator[](std::size_t k) { return tensors_[k]; }
  const NamedTensor& operator[](std::size_t k) const { return tensors_[k]; }
  const ad::Tensor& get(const std::string& name) const;
  ad::Tensor& get(const std::string& name);
  std::size_t index_of(const std::string& name) const;
  Index n_scalars() const;
  bool all_finite() const;
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<NamedTensor> tensors_;
};

/// Record every tensor on the tape, as variables or as constants.
std::vector<ad::Var> bind(ad::Tape& tape, const ParameterSet& params, bool as_variables);

void write_parameters(std::ostream& os, const ParameterSet& params);
ParameterSet read_parameters(std::istream& is);
void save_parameters(const std::string& path, const ParameterSet& params);
ParameterSet load_parameters(const std::string& path);

/// Softmax; throws on non-finite scores.
Eigen::VectorXd scores_to_allocation(const Eigen::VectorXd& scores);

Eigen::VectorXd uniform_alloc(const FinancialNetwork& net);
Eigen::VectorXd default_alloc(const FinancialNetwork& net, double tol = 1e-9,
                              const ClearingOptions& opts = {});
Eigen::VectorXd level1_alloc(const FinancialNetwork& net);

/// N x d node features for the given mode, with optional ID column
/// (values 1..N) and zero padding.
ad::Tensor node_features(const FinancialNetwork& net, FeatureMode mode, bool use_ids,
                         Index pad_to, double scale = 1.0);

class Allocator {
 public:
  explicit Allocator(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  bool trainable() const { return !params_.empty(); }

  /// Re-draw parameters from `seed`.
  void initialize(std::uint64_t seed);

  ad::Tensor features(const FinancialNetwork& net) const;

  /// Per-node scores (N x 1) of a learned model; `p` binds params().
  ad::Var scores(ad::Tape& tape, const FinancialNetwork& net, const ad::Tensor& features,
                 std::span<const ad::Var> p) const;

  /// Allocation weights (N x 1). Benchmark rules return a constant.
  ad::Var weights(ad::Tape& tape, const FinancialNetwork& net, std::span<const ad::Var> p) const;
  ad::Var weights(ad::Tape& tape, const FinancialNetwork& net, const ad::Tensor& features,
                  std::span<const ad::Var> p) const;

  Eigen::VectorXd weights(const FinancialNetwork& net) const;
  Eigen::VectorXd weights(const FinancialNetwork& net, const ad::Tensor& features) const;

 private:
  void check_n(const FinancialNetwork& net) const;
  ad::Var mlp(ad::Tape& tape, const std::string& prefix, std::size_t n_layers, ad::Var x,
              std::span<const ad::Var> p) const;
  std::size_t n_layers(const std::string& prefix) const;

  ModelConfig cfg_;
  ParameterSet params_;
};

}  // namespace sysrisk
