#include "sysrisk/allocators.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sysrisk/network_io.hpp"

namespace sysrisk {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr std::pair<ModelKind, const char*> kModelNames[] = {
    {ModelKind::kNone, "none"},       {ModelKind::kUniform, "uniform"},
    {ModelKind::kDefault, "default"}, {ModelKind::kLevel1, "level1"},
    {ModelKind::kConstant, "constant"}, {ModelKind::kLinear, "linear"},
    {ModelKind::kFnn, "fnn"},         {ModelKind::kFnnL, "fnn_l"},
    {ModelKind::kGnn, "gnn"},         {ModelKind::kPenn, "penn"},
    {ModelKind::kXpenn, "xpenn"},
};

Index feature_columns(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kZero: return 0;
    case FeatureMode::kAssets: return 1;
    case FeatureMode::kBalance: return 3;
  }
  return 0;
}

Index feature_dim(const ModelConfig& cfg) {
  const Index d = feature_columns(cfg.features) + (cfg.use_ids ? 1 : 0);
  return std::max(d, cfg.feature_width);
}

std::string layer_name(const std::string& prefix, std::size_t l, const char* what) {
  return prefix + "." + std::to_string(l) + "." + what;
}

// Weights U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
void add_mlp(ParameterSet& ps, std::mt19937_64& rng, const std::string& prefix, Index in,
             const std::vector<Index>& hidden, Index out) {
  std::vector<Index> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(dims[l], 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(dims[l], dims[l + 1]);
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = u(rng);
    ps.add(layer_name(prefix, l, "w"), std::move(w));
    ps.add(layer_name(prefix, l, "b"), Tensor::Zero(1, dims[l + 1]));
  }
}

// Mean over the incoming neighborhood, weighted by the edge size: row i holds
// l_ji / |N(i)| at column j. Empty neighborhoods aggregate to zero.
Tensor sage_aggregation(const FinancialNetwork& net) {
  const Index n = net.size();
  const auto& l = net.liabilities();
  Tensor m = Tensor::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    Index deg = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i && l(j, i) != 0) ++deg;
    if (deg == 0) continue;
    for (Index j = 0; j < n; ++j)
      if (j != i && l(j, i) != 0) m(i, j) = l(j, i) / static_cast<double>(deg);
  }
  return m;
}

// Rows (i, j), j != i, ordered by i then j: [x_i, l_ij, x_j] and, for the
// bidirectional variant, [x_i, l_ij, l_ji, x_j].
Tensor pair_inputs(const Tensor& x, const Eigen::MatrixXd& l, bool both_directions) {
  const Index n = x.rows(), d = x.cols();
  const Index width = 2 * d + (both_directions ? 2 : 1);
  Tensor out(n * (n - 1), width);
  Index r = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      out.block(r, 0, 1, d) = x.row(i);
      out(r, d) = l(i, j);
      if (both_directions) out(r, d + 1) = l(j, i);
      out.block(r, width - d, 1, d) = x.row(j);
      ++r;
    }
  return out;
}

}  // namespace

std::string to_string(ModelKind kind) {
  for (const auto& [k, name] : kModelNames)
    if (k == kind) return name;
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kModelNames)
    if (name == n) return k;
  if (name == "fnnl" || name == "fnn(l)") return ModelKind::kFnnL;
  if (name == "level-1") return ModelKind::kLevel1;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kZero: return "zero";
    case FeatureMode::kAssets: return "assets";
    case FeatureMode::kBalance: return "balance";
  }
  return "unknown";
}

FeatureMode feature_mode_from_string(const std::string& name) {
  for (auto m : {FeatureMode::kZero, FeatureMode::kAssets, FeatureMode::kBalance})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown feature mode '" + name + "'");
}

bool ModelConfig::learned() const {
  switch (kind) {
    case ModelKind::kNone:
    case ModelKind::kUniform:
    case ModelKind::kDefault:
    case ModelKind::kLevel1: return false;
    default: return true;
  }
}

void ModelConfig::validate() const {
  if (n_nodes < 0) throw std::invalid_argument("model n_nodes must be non-negative");
  if (!(feature_scale > 0) || !std::isfinite(feature_scale))
    throw std::invalid_argument("feature_scale must be positive");
  if (feature_width < 0) throw std::invalid_argument("feature_width must be non-negative");
  const bool needs_n = kind == ModelKind::kConstant || kind == ModelKind::kFnn || kind == ModelKind::kFnnL;
  if (needs_n && n_nodes < 1)
    throw std::invalid_argument(to_string(kind) + " needs a fixed n_nodes");
  const bool needs_features = learned() && kind != ModelKind::kConstant;
  if (needs_features && feature_dim(*this) < 1)
    throw std::invalid_argument(to_string(kind) + " needs at least one feature column");
  auto positive = [](const std::vector<Index>& v, const char* what) {
    for (Index w : v)
      if (w < 1) throw std::invalid_argument(std::string(what) + " widths must be positive");
  };
  positive(hidden, "hidden");
  positive(phi_hidden, "phi_hidden");
  positive(alpha_hidden, "alpha_hidden");
  positive(rho_hidden, "rho_hidden");
  positive(psi_hidden, "psi_hidden");
  if (kind == ModelKind::kGnn && (gnn_layers < 1 || gnn_width < 1))
    throw std::invalid_argument("gnn needs at least one layer of positive width");
  if ((kind == ModelKind::kPenn || kind == ModelKind::kXpenn) && (repr_width < 1 || psi_width < 1))
    throw std::invalid_argument("penn representation widths must be positive");
  if (!(default_tol >= 0)) throw std::invalid_argument("default_tol must be non-negative");
}

ModelConfig toy_model_config(ModelKind kind, Index n_nodes) {
  ModelConfig c;
  c.kind = kind;
  c.n_nodes = n_nodes;
  switch (kind) {
    case ModelKind::kGnn:
      c.features = FeatureMode::kZero;
      c.feature_width = 10;
      c.gnn_layers = 2;
      c.gnn_width = 10;
      break;
    case ModelKind::kFnnL:
      c.features = FeatureMode::kAssets;
      c.hidden = {n_nodes};
      break;
    case ModelKind::kPenn:
    case ModelKind::kXpenn:
      c.features = FeatureMode::kAssets;
      c.rho_hidden = {10};
      c.psi_hidden = {10};
      break;
    default: break;
  }
  return c;
}

ModelConfig default_model_config(ModelKind kind, Index n_nodes) {
  ModelConfig c;
  c.kind = kind;
  c.n_nodes = n_nodes;
  switch (kind) {
    case ModelKind::kGnn:
      c.feature_width = 10;
      c.gnn_layers = 5;
      break;
    case ModelKind::kFnn: c.hidden = {100, 100}; break;
    case ModelKind::kFnnL: c.hidden = {100}; break;
    default: break;
  }
  return c;
}

// ---- ParameterSet -------------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value) {
  for (const auto& t : tensors_)
    if (t.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
  tensors_.push_back({std::move(name), std::move(value)});
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  for (std::size_t k = 0; k < tensors_.size(); ++k)
    if (tensors_[k].name == name) return k;
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Tensor& ParameterSet::get(const std::string& name) const { return tensors_[index_of(name)].value; }
Tensor& ParameterSet::get(const std::string& name) { return tensors_[index_of(name)].value; }

Index ParameterSet::n_scalars() const {
  Index n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t k = 0; k < size(); ++k) {
    const auto& a = tensors_[k];
    const auto& b = other.tensors_[k];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value)
      return false;
  }
  return true;
}

std::vector<Var> bind(Tape& tape, const ParameterSet& params, bool as_variables) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& t : params) out.push_back(as_variables ? tape.variable(t.value) : tape.constant(t.value));
  return out;
}

void write_parameters(std::ostream& os, const ParameterSet& params) {
  os << "sysrisk-params v1\n" << params.size() << "\n";
  for (const auto& t : params) {
    os << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
    for (Index r = 0; r < t.value.rows(); ++r) {
      for (Index c = 0; c < t.value.cols(); ++c) os << (c ? " " : "") << format_real(t.value(r, c));
      os << '\n';
    }
  }
}

ParameterSet read_parameters(std::istream& is) {
  std::string magic;
  std::getline(is, magic);
  if (magic != "sysrisk-params v1") throw FormatError("parameter file: bad header '" + magic + "'");
  std::size_t count = 0;
  if (!(is >> count)) throw FormatError("parameter file: missing tensor count");
  ParameterSet ps;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    Index rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols) || rows < 0 || cols < 0)
      throw FormatError("parameter file: bad header for tensor " + std::to_string(k));
    Tensor t(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        if (!(is >> t(r, c))) throw FormatError("parameter file: truncated tensor '" + name + "'");
    ps.add(std::move(name), std::move(t));
  }
  return ps;
}

void save_parameters(const std::string& path, const ParameterSet& params) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_parameters(os, params);
  if (!os) throw std::runtime_error("write failed: " + path);
}

ParameterSet load_parameters(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_parameters(is);
}

// ---- benchmark rules ------------------------------------------------------------

Eigen::VectorXd scores_to_allocation(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) throw std::invalid_argument("scores_to_allocation: empty scores");
  if (!scores.allFinite()) throw ad::NonFiniteError("scores_to_allocation: non-finite score");
  Eigen::VectorXd e = (scores.array() - scores.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd uniform_alloc(const FinancialNetwork& net) {
  return Eigen::VectorXd::Constant(net.size(), 1.0 / static_cast<double>(net.size()));
}

namespace {

Eigen::VectorXd equal_on(const std::vector<Index>& nodes, Index n) {
  if (nodes.empty()) return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Index i : nodes) w(i) = 1.0 / static_cast<double>(nodes.size());
  return w;
}

}  // namespace

Eigen::VectorXd default_alloc(const FinancialNetwork& net, double tol, const ClearingOptions& opts) {
  const auto d = derive_liabilities(net);
  const auto res = clearing_vector(net.assets(), d, opts);
  std::vector<Index> defaulted;
  for (Index i = 0; i < net.size(); ++i)
    if (res.clearing_vector(i) < d.total(i) - tol) defaulted.push_back(i);
  return equal_on(defaulted, net.size());
}

Eigen::VectorXd level1_alloc(const FinancialNetwork& net) {
  const Eigen::VectorXd balance =
      net.assets() - net.liabilities().rowwise().sum() + incoming_liabilities(net);
  std::vector<Index> negative;
  for (Index i = 0; i < net.size(); ++i)
    if (balance(i) < 0) negative.push_back(i);
  return equal_on(negative, net.size());
}

Tensor node_features(const FinancialNetwork& net, FeatureMode mode, bool use_ids, Index pad_to,
                     double scale) {
  const Index n = net.size();
  const Index base = feature_columns(mode) + (use_ids ? 1 : 0);
  Tensor x = Tensor::Zero(n, std::max(base, pad_to));
  if (mode != FeatureMode::kZero) x.col(0) = net.assets() / scale;
  if (mode == FeatureMode::kBalance) {
    x.col(1) = incoming_liabilities(net) / scale;
    x.col(2) = net.liabilities().rowwise().sum() / scale;
  }
  if (use_ids)
    x.col(feature_columns(mode)) = Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n));
  return x;
}

// ---- Allocator ------------------------------------------------------------------

Allocator::Allocator(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  initialize(cfg_.seed);
}

void Allocator::initialize(std::uint64_t seed) {
  cfg_.seed = seed;
  params_ = ParameterSet();
  std::mt19937_64 rng(seed);
  const Index d = feature_dim(cfg_);
  const Index n = cfg_.n_nodes;
  switch (cfg_.kind) {
    case ModelKind::kConstant: params_.add("theta", Tensor::Zero(n, 1)); break;
    case ModelKind::kLinear: add_mlp(params_, rng, "linear", d, {}, 1); break;
    case ModelKind::kFnn: add_mlp(params_, rng, "fnn", n * d, cfg_.hidden, n); break;
    case ModelKind::kFnnL: add_mlp(params_, rng, "fnn", n * d + n * n, cfg_.hidden, n); break;
    case ModelKind::kGnn: {
      Index in = d;
      for (Index l = 0; l < cfg_.gnn_layers; ++l) {
        const Index out = l + 1 == cfg_.gnn_layers ? 1 : cfg_.gnn_width;
        const double bound = 1.0 / std::sqrt(static_cast<double>(2 * in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor w(2 * in, out);
        for (Index k = 0; k < w.size(); ++k) w.data()[k] = u(rng);
        params_.add(layer_name("gnn", static_cast<std::size_t>(l), "w"), std::move(w));
        if (cfg_.gnn_bias)
          params_.add(layer_name("gnn", static_cast<std::size_t>(l), "b"), Tensor::Zero(1, out));
        in = out;
      }
      break;
    }
    case ModelKind::kPenn:
    case ModelKind::kXpenn: {
      const bool x = cfg_.kind == ModelKind::kXpenn;
      add_mlp(params_, rng, "phi", 2 * d + 1, cfg_.phi_hidden, cfg_.repr_width);
      add_mlp(params_, rng, "alpha", d + cfg_.repr_width, cfg_.alpha_hidden, cfg_.repr_width);
      add_mlp(params_, rng, "rho", d + cfg_.repr_width + (x ? cfg_.psi_width : 0), cfg_.rho_hidden, 1);
      if (x) add_mlp(params_, rng, "psi", 2 * d + 2, cfg_.psi_hidden, cfg_.psi_width);
      break;
    }
    default: break;
  }
}

Tensor Allocator::features(const FinancialNetwork& net) const {
  return node_features(net, cfg_.features, cfg_.use_ids, cfg_.feature_width, cfg_.feature_scale);
}

void Allocator::check_n(const FinancialNetwork& net) const {
  if (cfg_.n_nodes > 0 && net.size() != cfg_.n_nodes &&
      (cfg_.kind == ModelKind::kConstant || cfg_.kind == ModelKind::kFnn || cfg_.kind == ModelKind::kFnnL))
    throw ad::ShapeError(to_string(cfg_.kind) + " was built for N=" + std::to_string(cfg_.n_nodes) +
                         ", got N=" + std::to_string(net.size()));
}

std::size_t Allocator::n_layers(const std::string& prefix) const {
  if (prefix == "phi") return cfg_.phi_hidden.size() + 1;
  if (prefix == "alpha") return cfg_.alpha_hidden.size() + 1;
  if (prefix == "rho") return cfg_.rho_hidden.size() + 1;
  if (prefix == "psi") return cfg_.psi_hidden.size() + 1;
  if (prefix == "linear") return 1;
  return cfg_.hidden.size() + 1;
}

// Affine layers with a sigmoid between consecutive layers.
Var Allocator::mlp(Tape&, const std::string& prefix, std::size_t layers, Var x,
                   std::span<const Var> p) const {
  for (std::size_t l = 0; l < layers; ++l) {
    const Var& w = p[params_.index_of(layer_name(prefix, l, "w"))];
    const Var& b = p[params_.index_of(layer_name(prefix, l, "b"))];
    x = ad::linear(x, w, b);
    if (l + 1 < layers) x = ad::sigmoid(x);
  }
  return x;
}

Var Allocator::scores(Tape& tape, const FinancialNetwork& net, const Tensor& x,
                      std::span<const Var> p) const {
  if (!cfg_.learned()) throw std::logic_error(to_string(cfg_.kind) + " has no scores");
  if (p.size() != params_.size()) throw ad::ShapeError("scores: parameter count mismatch");
  check_n(net);
  const Index n = net.size();
  if (cfg_.kind != ModelKind::kConstant && (x.rows() != n || x.cols() != feature_dim(cfg_)))
    throw ad::ShapeError("scores: features must be " + std::to_string(n) + "x" +
                         std::to_string(feature_dim(cfg_)));

  switch (cfg_.kind) {
    case ModelKind::kConstant: return p[0];
    case ModelKind::kLinear: return mlp(tape, "linear", 1, tape.constant(x), p);
    case ModelKind::kFnn:
    case ModelKind::kFnnL: {
      // [feature column 0 of all nodes, column 1 of all nodes, ...]
      Tensor in(1, x.size() + (cfg_.kind == ModelKind::kFnnL ? n * n : 0));
      in.leftCols(x.size()) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), x.size());
      if (cfg_.kind == ModelKind::kFnnL) {
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> l = net.liabilities();
        in.rightCols(n * n) = Eigen::Map<const Eigen::RowVectorXd>(l.data(), n * n);
      }
      return ad::transpose(mlp(tape, "fnn", n_layers("fnn"), tape.constant(std::move(in)), p));
    }
    case ModelKind::kGnn: {
      const Var agg = tape.constant(sage_aggregation(net));
      Var h = tape.constant(x);
      for (Index l = 0; l < cfg_.gnn_layers; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        const Var hn = ad::matmul(agg, h);
        const Var& w = p[params_.index_of(layer_name("gnn", ul, "w"))];
        const Var cat = ad::concat_cols({h, hn});
        h = cfg_.gnn_bias ? ad::linear(cat, w, p[params_.index_of(layer_name("gnn", ul, "b"))])
                          : ad::linear(cat, w);
        if (l + 1 < cfg_.gnn_layers) h = ad::sigmoid(h);
      }
      return h;
    }
    case ModelKind::kPenn:
    case ModelKind::kXpenn: {
      const bool extended = cfg_.kind == ModelKind::kXpenn;
      const auto squash = [&](const Var& v) { return cfg_.squash_representations ? ad::sigmoid(v) : v; };
      const Var xv = tape.constant(x);
      Var inner, psi_sum;
      if (n > 1) {
        const Var pairs = tape.constant(pair_inputs(x, net.liabilities(), false));
        inner = ad::segment_sum(squash(mlp(tape, "phi", n_layers("phi"), pairs, p)), n - 1);
        if (extended) {
          const Var both = tape.constant(pair_inputs(x, net.liabilities(), true));
          psi_sum = ad::segment_sum(squash(mlp(tape, "psi", n_layers("psi"), both, p)), n - 1);
        }
      } else {
        inner = tape.constant(Tensor::Zero(1, cfg_.repr_width));
        if (extended) psi_sum = tape.constant(Tensor::Zero(1, cfg_.psi_width));
      }
      const Var a = squash(mlp(tape, "alpha", n_layers("alpha"), ad::concat_cols({xv, inner}), p));
      const Var pooled = ad::repeat_rows(ad::sum_rows(a), n);
      const Var rho_in = extended ? ad::concat_cols({xv, pooled, psi_sum}) : ad::concat_cols({xv, pooled});
      return mlp(tape, "rho", n_layers("rho"), rho_in, p);
    }
    default: break;
  }
  throw std::logic_error("scores: unhandled model kind");
}

Var Allocator::weights(Tape& tape, const FinancialNetwork& net, std::span<const Var> p) const {
  if (!cfg_.learned() || cfg_.kind == ModelKind::kConstant) return weights(tape, net, Tensor(), p);
  return weights(tape, net, features(net), p);
}

Var Allocator::weights(Tape& tape, const FinancialNetwork& net, const Tensor& x,
                       std::span<const Var> p) const {
  switch (cfg_.kind) {
    case ModelKind::kNone:
    case ModelKind::kUniform: return tape.constant(uniform_alloc(net));
    case ModelKind::kDefault: return tape.constant(default_alloc(net, cfg_.default_tol));
    case ModelKind::kLevel1: return tape.constant(level1_alloc(net));
    default: return ad::softmax(scores(tape, net, x, p));
  }
}

Eigen::VectorXd Allocator::weights(const FinancialNetwork& net) const {
  Tape tape;
  return weights(tape, net, bind(tape, params_, false)).value();
}

Eigen::VectorXd Allocator::weights(const FinancialNetwork& net, const Tensor& x) const {
  Tape tape;
  return weights(tape, net, x, bind(tape, params_, false)).value();
}

}  // namespace sysrisk
