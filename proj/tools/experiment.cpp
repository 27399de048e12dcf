#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "sysrisk/network_io.hpp"
#include "sysrisk/oracle.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/risk.hpp"

#ifndef SYSRISK_GIT_DESCRIBE
#define SYSRISK_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;

namespace sysrisk::cli {

namespace {

constexpr std::pair<Mode, const char*> kModes[] = {
    {Mode::kGenerate, "generate"}, {Mode::kTrainInner, "train-inner"}, {Mode::kTrainOuter, "train-outer"},
    {Mode::kEvaluate, "evaluate"}, {Mode::kOracle, "oracle"},          {Mode::kReport, "report"},
};

constexpr std::pair<ModelKind, const char*> kDisplayNames[] = {
    {ModelKind::kNone, "None"},         {ModelKind::kUniform, "Uniform"}, {ModelKind::kDefault, "Default"},
    {ModelKind::kLevel1, "Level-1"},    {ModelKind::kConstant, "Constant"}, {ModelKind::kLinear, "Linear"},
    {ModelKind::kFnn, "FNN"},           {ModelKind::kFnnL, "FNN(L)"},     {ModelKind::kGnn, "GNN"},
    {ModelKind::kPenn, "PENN"},         {ModelKind::kXpenn, "XPENN"},
};

std::string display_name(const std::string& model) {
  for (const auto& [k, name] : kDisplayNames)
    if (sysrisk::to_string(k) == model) return name;
  return model;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

std::string resolve_path(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

// ---- generator ----------------------------------------------------------------

GeneratorConfig parse_generator(const json& j) {
  const std::string s = "dataset.generator";
  check_keys(j,
             {"kind", "n_nodes", "n_samples", "edge_probability", "edge_size", "beta_alpha", "beta_beta",
              "asset_scale", "asset_scale_large", "asset_floor", "n_large", "p_large_large", "p_large_small",
              "p_small_large", "p_small_small", "size_large_large", "size_mixed", "size_small_small",
              "copula_correlation"},
             s);
  GeneratorConfig g;
  std::string kind = sysrisk::to_string(g.kind);
  read(j, "kind", kind, s);
  try {
    g.kind = generator_kind_from_string(kind);
  } catch (const std::exception& e) {
    throw ConfigError(s + ".kind: " + e.what());
  }
  read(j, "n_nodes", g.n_nodes, s);
  read(j, "n_samples", g.n_samples, s);
  read(j, "edge_probability", g.edge_probability, s);
  read(j, "edge_size", g.edge_size, s);
  read(j, "beta_alpha", g.beta_alpha, s);
  read(j, "beta_beta", g.beta_beta, s);
  read(j, "asset_scale", g.asset_scale, s);
  read(j, "asset_scale_large", g.asset_scale_large, s);
  read(j, "asset_floor", g.asset_floor, s);
  read(j, "n_large", g.n_large, s);
  read(j, "p_large_large", g.p_large_large, s);
  read(j, "p_large_small", g.p_large_small, s);
  read(j, "p_small_large", g.p_small_large, s);
  read(j, "p_small_small", g.p_small_small, s);
  read(j, "size_large_large", g.size_large_large, s);
  read(j, "size_mixed", g.size_mixed, s);
  read(j, "size_small_small", g.size_small_small, s);
  read(j, "copula_correlation", g.copula_correlation, s);
  return g;
}

json generator_json(const GeneratorConfig& g) {
  json j;
  j["kind"] = sysrisk::to_string(g.kind);
  j["n_nodes"] = g.n_nodes;
  j["n_samples"] = g.n_samples;
  for (const auto& [k, v] : g.parameters())
    if (!j.contains(k) && k != "seed") j[k] = v;
  return j;
}

// ---- model --------------------------------------------------------------------

void apply_model_overrides(ModelConfig& m, const json& j) {
  const std::string s = "model";
  std::string features = sysrisk::to_string(m.features);
  read(j, "features", features, s);
  try {
    m.features = feature_mode_from_string(features);
  } catch (const std::exception& e) {
    throw ConfigError(s + ".features: " + e.what());
  }
  read(j, "n_nodes", m.n_nodes, s);
  read(j, "use_ids", m.use_ids, s);
  read(j, "feature_width", m.feature_width, s);
  read(j, "feature_scale", m.feature_scale, s);
  read(j, "hidden", m.hidden, s);
  read(j, "gnn_layers", m.gnn_layers, s);
  read(j, "gnn_width", m.gnn_width, s);
  read(j, "gnn_bias", m.gnn_bias, s);
  read(j, "repr_width", m.repr_width, s);
  read(j, "psi_width", m.psi_width, s);
  read(j, "phi_hidden", m.phi_hidden, s);
  read(j, "alpha_hidden", m.alpha_hidden, s);
  read(j, "rho_hidden", m.rho_hidden, s);
  read(j, "psi_hidden", m.psi_hidden, s);
  read(j, "squash_representations", m.squash_representations, s);
  read(j, "default_tol", m.default_tol, s);
}

bool fixed_size(ModelKind k) { return k == ModelKind::kConstant || k == ModelKind::kFnn || k == ModelKind::kFnnL; }

ModelConfig resolve_model(const ModelSpec& spec, Index n_nodes, std::uint64_t seed) {
  const ModelKind kind = spec.config.kind;
  ModelConfig m;
  if (spec.preset == "toy") {
    m = toy_model_config(kind, n_nodes);
  } else if (spec.preset == "default") {
    m = default_model_config(kind, n_nodes);
  } else {
    m.kind = kind;
  }
  if (!fixed_size(kind) && spec.preset != "toy") m.n_nodes = 0;
  if (fixed_size(kind)) m.n_nodes = n_nodes;
  apply_model_overrides(m, spec.overrides);
  m.seed = seed;
  return m;
}

json model_json(const ModelSpec& spec, const ModelConfig& m) {
  json j;
  j["kind"] = sysrisk::to_string(m.kind);
  j["preset"] = spec.preset;
  j["n_nodes"] = m.n_nodes;
  j["features"] = sysrisk::to_string(m.features);
  j["use_ids"] = m.use_ids;
  j["feature_width"] = m.feature_width;
  j["feature_scale"] = m.feature_scale;
  j["hidden"] = m.hidden;
  j["gnn_layers"] = m.gnn_layers;
  j["gnn_width"] = m.gnn_width;
  j["gnn_bias"] = m.gnn_bias;
  j["repr_width"] = m.repr_width;
  j["psi_width"] = m.psi_width;
  j["phi_hidden"] = m.phi_hidden;
  j["alpha_hidden"] = m.alpha_hidden;
  j["rho_hidden"] = m.rho_hidden;
  j["psi_hidden"] = m.psi_hidden;
  j["squash_representations"] = m.squash_representations;
  j["default_tol"] = m.default_tol;
  j["checkpoint"] = spec.checkpoint;
  return j;
}

// ---- training -----------------------------------------------------------------

void parse_training(const json& j, ExperimentConfig& cfg) {
  const std::string s = "training";
  check_keys(j,
             {"epochs_inner", "epochs_outer", "lr", "lr_capital", "beta1", "beta2", "adam_eps", "mu1", "mu2", "b",
              "capital_init", "batch_size", "lr_grid", "grid_search", "grid_stop_risk", "select_on_validation",
              "band_fraction", "chunk_size", "clearing_tol", "clearing_max_iter"},
             s);
  TrainConfig& t = cfg.training;
  read(j, "epochs_inner", t.epochs_inner, s);
  read(j, "epochs_outer", t.epochs_outer, s);
  read(j, "lr", t.lr, s);
  read(j, "lr_capital", t.lr_capital, s);
  read(j, "beta1", t.beta1, s);
  read(j, "beta2", t.beta2, s);
  read(j, "adam_eps", t.adam_eps, s);
  read(j, "mu1", t.mu1, s);
  read(j, "mu2", t.mu2, s);
  read(j, "b", t.b, s);
  if (j.contains("capital_init") && !j.at("capital_init").is_null()) {
    double c0 = 0;
    read(j, "capital_init", c0, s);
    t.capital_init = c0;
  }
  read(j, "batch_size", t.batch_size, s);
  read(j, "lr_grid", t.lr_grid, s);
  read(j, "grid_search", cfg.grid_search, s);
  if (j.contains("grid_stop_risk") && !j.at("grid_stop_risk").is_null()) read(j, "grid_stop_risk", t.grid_stop_risk, s);
  read(j, "select_on_validation", t.select_on_validation, s);
  read(j, "band_fraction", t.band_fraction, s);
  read(j, "chunk_size", t.chunk_size, s);
  read(j, "clearing_tol", t.clearing.tol, s);
  read(j, "clearing_max_iter", t.clearing.max_iter, s);
}

json training_json(const TrainConfig& t, bool grid_search) {
  json j;
  j["epochs_inner"] = t.epochs_inner;
  j["epochs_outer"] = t.epochs_outer;
  j["lr"] = t.lr;
  j["lr_capital"] = t.lr_capital;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["mu1"] = t.mu1;
  j["mu2"] = t.mu2;
  j["b"] = t.b;
  j["capital_init"] = t.capital_init ? json(*t.capital_init) : json(nullptr);
  j["batch_size"] = t.batch_size;
  j["lr_grid"] = t.lr_grid;
  j["grid_search"] = grid_search;
  j["grid_stop_risk"] = std::isfinite(t.grid_stop_risk) ? json(t.grid_stop_risk) : json(nullptr);
  j["select_on_validation"] = t.select_on_validation;
  j["band_fraction"] = t.band_fraction;
  j["chunk_size"] = t.chunk_size;
  j["clearing_tol"] = t.clearing.tol;
  j["clearing_max_iter"] = t.clearing.max_iter;
  return j;
}

// ---- artifacts ----------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string csv_real(double v) { return std::isfinite(v) ? format_real(v) : ""; }

struct Partition {
  std::string name;
  ScenarioSet set;
};

struct Dataset {
  ScenarioSet all;
  std::vector<Partition> parts;
  const ScenarioSet* find(const std::string& name) const {
    for (const auto& p : parts)
      if (p.name == name) return &p.set;
    return nullptr;
  }
};

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  if (cfg.dataset.generator) {
    GeneratorConfig g = *cfg.dataset.generator;
    g.seed = cfg.seed;
    d.all = generate(g);
  } else {
    d.all = ScenarioSet(load_networks(cfg.dataset.path));
  }
  if (cfg.dataset.split) {
    auto s = split(d.all, *cfg.dataset.split, cfg.dataset.split_seed.value_or(cfg.seed));
    if (!s.train.empty()) d.parts.push_back({"train", std::move(s.train)});
    if (!s.val.empty()) d.parts.push_back({"val", std::move(s.val)});
    if (!s.test.empty()) d.parts.push_back({"test", std::move(s.test)});
  } else {
    d.parts.push_back({"all", d.all});
  }
  return d;
}

const ScenarioSet& train_part(const Dataset& d) {
  if (const auto* t = d.find("train")) return *t;
  return d.parts.front().set;
}

void write_report(const fs::path& out, const Dataset& d, const Allocator& alloc, double c, const ClearingOptions& opts,
                  WorkerPool* pool) {
  std::ostringstream csv;
  csv << "split,model,capital,risk\n";
  for (const auto& p : d.parts) {
    const double risk = inner_risk_estimate(p.set, alloc, c, opts, pool).value;
    csv << p.name << ',' << sysrisk::to_string(alloc.kind()) << ',' << format_real(c) << ',' << format_real(risk)
        << '\n';
    std::printf("%-5s %-8s capital %s risk %s\n", p.name.c_str(), sysrisk::to_string(alloc.kind()).c_str(),
                format_real(c).c_str(), format_real(risk).c_str());
  }
  write_text(out / "report.csv", csv.str());
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ostringstream csv;
  csv << "round,epoch,capital,train_risk,val_risk\n";
  for (const auto& h : history)
    csv << h.round << ',' << h.epoch << ',' << format_real(h.capital) << ',' << csv_real(h.train_risk) << ','
        << csv_real(h.val_risk) << '\n';
  write_text(path, csv.str());
}

void load_checkpoint(Allocator& alloc, const std::string& path) {
  ParameterSet loaded = load_parameters(path);
  const ParameterSet& want = alloc.params();
  bool ok = loaded.size() == want.size();
  for (std::size_t k = 0; ok && k < want.size(); ++k)
    ok = loaded[k].name == want[k].name && loaded[k].value.rows() == want[k].value.rows() &&
         loaded[k].value.cols() == want[k].value.cols();
  if (!ok) throw ConfigError("checkpoint " + path + " does not match the configured model");
  alloc.params() = std::move(loaded);
}

void write_metadata(const fs::path& out, const ExperimentConfig& cfg, const json& echo) {
  const std::string dumped = echo.dump(2) + "\n";
  write_text(out / "config.json", dumped);
  json meta;
  meta["mode"] = to_string(cfg.mode);
  meta["seed"] = cfg.seed;
  meta["threads"] = cfg.threads;
  meta["git_describe"] = SYSRISK_GIT_DESCRIBE;
  meta["config_hash"] = fnv1a_hex(dumped);
  write_text(out / "metadata.json", meta.dump(2) + "\n");
}

// ---- modes --------------------------------------------------------------------

void run_generate(const ExperimentConfig& cfg, const fs::path& out) {
  write_metadata(out, cfg, to_json(cfg));
  GeneratorConfig g = *cfg.dataset.generator;
  g.seed = cfg.seed;
  const ScenarioSet set = generate(g);
  std::ostringstream text;
  write_networks(text, set.networks());
  write_text(out / "dataset.txt", text.str());
  json side;
  side["generator"] = sysrisk::to_string(g.kind);
  side["parameters"] = set.parameters;
  side["seed"] = g.seed;
  side["n_samples"] = set.size();
  side["n_nodes"] = set.n_nodes();
  side["creation_hash"] = fnv1a_hex(text.str());
  write_text(out / "dataset.json", side.dump(2) + "\n");
  std::printf("wrote %zu networks with %ld nodes to %s\n", set.size(), static_cast<long>(set.n_nodes()),
              (out / "dataset.txt").string().c_str());
}

Allocator make_allocator(const ExperimentConfig& cfg, const Dataset& d, json& echo) {
  ModelConfig m = resolve_model(cfg.model, d.all.n_nodes(), cfg.seed);
  echo["model"] = model_json(cfg.model, m);
  Allocator alloc(m);
  if (!cfg.model.checkpoint.empty()) load_checkpoint(alloc, cfg.model.checkpoint);
  return alloc;
}

void run_evaluate(const ExperimentConfig& cfg, const fs::path& out, WorkerPool* pool) {
  const Dataset d = load_dataset(cfg);
  json echo = to_json(cfg);
  const Allocator alloc = make_allocator(cfg, d, echo);
  write_metadata(out, cfg, echo);
  write_report(out, d, alloc, cfg.capital, cfg.training.clearing, pool);
}

void run_train_inner(const ExperimentConfig& cfg, const fs::path& out, WorkerPool* pool) {
  const Dataset d = load_dataset(cfg);
  json echo = to_json(cfg);
  Allocator alloc = make_allocator(cfg, d, echo);
  write_metadata(out, cfg, echo);
  const ScenarioSet& train = train_part(d);
  const ScenarioSet* val = d.find("val");
  if (cfg.grid_search) {
    const auto g = lr_grid_search(train, val, alloc, cfg.capital, cfg.training, pool);
    std::ostringstream csv;
    csv << "lr,diverged,risk,error\n";
    for (const auto& e : g.entries)
      csv << format_real(e.lr) << ',' << (e.diverged ? 1 : 0) << ',' << csv_real(e.risk) << ',' << '"' << e.error
          << '"' << '\n';
    write_text(out / "grid.csv", csv.str());
    write_history(out / "history.csv", g.best.history);
    std::printf("best lr %s\n", format_real(g.best_lr).c_str());
  } else {
    const auto r = train_inner(train, val, alloc, cfg.capital, cfg.training, pool);
    write_history(out / "history.csv", r.history);
  }
  save_parameters((out / "params.txt").string(), alloc.params());
  write_report(out, d, alloc, cfg.capital, cfg.training.clearing, pool);
}

void run_train_outer(const ExperimentConfig& cfg, const fs::path& out, WorkerPool* pool) {
  const Dataset d = load_dataset(cfg);
  json echo = to_json(cfg);
  Allocator alloc = make_allocator(cfg, d, echo);
  write_metadata(out, cfg, echo);
  const auto r = train_outer(train_part(d), d.find("val"), alloc, cfg.training, pool);
  write_history(out / "history.csv", r.history);
  std::ostringstream csv;
  csv << "round,capital,train_risk,objective\n";
  for (const auto& p : r.trajectory)
    csv << p.round << ',' << format_real(p.capital) << ',' << format_real(p.train_risk) << ','
        << format_real(p.objective) << '\n';
  write_text(out / "trajectory.csv", csv.str());
  json summary;
  summary["capital"] = r.capital;
  summary["train_risk"] = r.train_risk;
  summary["accepted"] = r.accepted;
  summary["within_band"] = r.within_band;
  summary["band"] = r.band;
  summary["b"] = cfg.training.b;
  write_text(out / "outer.json", summary.dump(2) + "\n");
  save_parameters((out / "params.txt").string(), alloc.params());
  std::printf("capital %s accepted %s\n", format_real(r.capital).c_str(), r.accepted ? "yes" : "no");
  write_report(out, d, alloc, r.capital, cfg.training.clearing, pool);
}

void run_oracle(const ExperimentConfig& cfg, const fs::path& out) {
  const Dataset d = load_dataset(cfg);
  write_metadata(out, cfg, to_json(cfg));
  if (cfg.oracle_network >= d.all.size())
    throw ConfigError("oracle.network index " + std::to_string(cfg.oracle_network) + " out of range");
  const auto r = brute_force_allocation(d.all[cfg.oracle_network], cfg.capital, cfg.oracle_resolution,
                                        cfg.training.clearing);
  json j;
  j["network"] = cfg.oracle_network;
  j["capital"] = cfg.capital;
  j["resolution"] = r.grid_resolution;
  j["evaluations"] = r.evaluations;
  j["best_loss"] = r.best_loss;
  j["best_weights"] = std::vector<double>(r.best_weights.data(), r.best_weights.data() + r.best_weights.size());
  write_text(out / "oracle.json", j.dump(2) + "\n");
  std::ostringstream csv;
  csv << "node,weight\n";
  for (Index i = 0; i < r.best_weights.size(); ++i) csv << i << ',' << format_real(r.best_weights(i)) << '\n';
  write_text(out / "oracle.csv", csv.str());
  std::printf("oracle loss %s over %zu grid points\n", format_real(r.best_loss).c_str(), r.evaluations);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void run_report(const ExperimentConfig& cfg, const fs::path& out) {
  write_metadata(out, cfg, to_json(cfg));
  struct Row {
    std::string model;
    std::map<std::string, double> risk;
    double capital = std::numeric_limits<double>::quiet_NaN();
  };
  std::vector<Row> rows;
  for (const auto& run_dir : cfg.report_runs) {
    const std::string text = read_text(fs::path(run_dir) / "report.csv");
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    if (line != "split,model,capital,risk") throw std::runtime_error(run_dir + "/report.csv: unexpected header");
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != 4) throw std::runtime_error(run_dir + "/report.csv: malformed line '" + line + "'");
      auto it = std::find_if(rows.begin(), rows.end(), [&](const Row& r) { return r.model == cells[1]; });
      if (it == rows.end()) {
        rows.push_back({cells[1], {}, std::numeric_limits<double>::quiet_NaN()});
        it = rows.end() - 1;
      }
      it->risk[cells[0] == "all" ? "train" : cells[0]] = std::stod(cells[3]);
      it->capital = std::stod(cells[2]);
    }
  }
  auto cell = [&](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", cfg.report_precision, v);
    return std::string(buf);
  };
  std::ostringstream csv;
  csv << "Model,Train Risk,Val. Risk,Test Risk,Capital\n";
  for (const auto& r : rows) {
    auto get = [&](const char* split) {
      const auto it = r.risk.find(split);
      return it == r.risk.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    };
    csv << display_name(r.model) << ',' << cell(get("train")) << ',' << cell(get("val")) << ',' << cell(get("test"))
        << ',' << cell(r.capital) << '\n';
  }
  write_text(out / "report.csv", csv.str());
  std::cout << csv.str();
}

}  // namespace

std::string to_string(Mode mode) {
  for (const auto& [m, name] : kModes)
    if (m == mode) return name;
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  for (const auto& [m, n] : kModes)
    if (name == n) return m;
  throw ConfigError("unknown mode '" + name + "'");
}

const std::vector<std::string>& mode_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [m, n] : kModes) v.emplace_back(n);
    return v;
  }();
  return names;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const json& doc, const std::string& base_dir) {
  check_keys(doc, {"mode", "seed", "threads", "output", "dataset", "model", "training", "capital", "oracle", "report"},
             "config");
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  if (doc.contains("mode")) {
    std::string m;
    read(doc, "mode", m, "config");
    cfg.mode = mode_from_string(m);
  }
  read(doc, "seed", cfg.seed, "config");
  read(doc, "threads", cfg.threads, "config");
  read(doc, "output", cfg.output, "config");
  read(doc, "capital", cfg.capital, "config");

  if (doc.contains("dataset")) {
    const json& d = doc.at("dataset");
    check_keys(d, {"generator", "path", "split", "split_seed"}, "dataset");
    if (d.contains("generator")) cfg.dataset.generator = parse_generator(d.at("generator"));
    read(d, "path", cfg.dataset.path, "dataset");
    cfg.dataset.path = resolve_path(base_dir, cfg.dataset.path);
    if (d.contains("split")) {
      const json& s = d.at("split");
      check_keys(s, {"train", "val", "test"}, "dataset.split");
      SplitFractions f;
      read(s, "train", f.train, "dataset.split");
      read(s, "val", f.val, "dataset.split");
      read(s, "test", f.test, "dataset.split");
      cfg.dataset.split = f;
    }
    if (d.contains("split_seed")) {
      std::uint64_t s = 0;
      read(d, "split_seed", s, "dataset");
      cfg.dataset.split_seed = s;
    }
  }

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    check_keys(m,
               {"kind", "preset", "checkpoint", "n_nodes", "features", "use_ids", "feature_width", "feature_scale",
                "hidden", "gnn_layers", "gnn_width", "gnn_bias", "repr_width", "psi_width", "phi_hidden",
                "alpha_hidden", "rho_hidden", "psi_hidden", "squash_representations", "default_tol"},
               "model");
    std::string kind = sysrisk::to_string(cfg.model.config.kind);
    read(m, "kind", kind, "model");
    try {
      cfg.model.config.kind = model_kind_from_string(kind);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("model.kind: ") + e.what());
    }
    read(m, "preset", cfg.model.preset, "model");
    if (cfg.model.preset != "default" && cfg.model.preset != "toy" && cfg.model.preset != "plain")
      throw ConfigError("model.preset must be default, toy or plain");
    read(m, "checkpoint", cfg.model.checkpoint, "model");
    cfg.model.checkpoint = resolve_path(base_dir, cfg.model.checkpoint);
    cfg.model.overrides = m;
    for (const char* k : {"kind", "preset", "checkpoint"}) cfg.model.overrides.erase(k);
    ModelConfig probe;
    apply_model_overrides(probe, cfg.model.overrides);
  }

  if (doc.contains("training")) parse_training(doc.at("training"), cfg);

  if (doc.contains("oracle")) {
    const json& o = doc.at("oracle");
    check_keys(o, {"resolution", "network"}, "oracle");
    read(o, "resolution", cfg.oracle_resolution, "oracle");
    read(o, "network", cfg.oracle_network, "oracle");
  }
  if (doc.contains("report")) {
    const json& r = doc.at("report");
    check_keys(r, {"runs", "precision"}, "report");
    read(r, "runs", cfg.report_runs, "report");
    for (auto& p : cfg.report_runs) p = resolve_path(base_dir, p);
    read(r, "precision", cfg.report_precision, "report");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(doc, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.threads < 1) throw ConfigError("threads must be at least 1");
  if (cfg.output.empty()) throw ConfigError("output directory is empty");
  const bool needs_data = cfg.mode != Mode::kReport;
  if (needs_data) {
    const bool gen = cfg.dataset.generator.has_value(), file = !cfg.dataset.path.empty();
    if (gen == file) throw ConfigError("dataset: give exactly one of generator or path");
    if (cfg.mode == Mode::kGenerate && !gen) throw ConfigError("generate needs dataset.generator");
    if (file && !fs::is_regular_file(cfg.dataset.path))
      throw ConfigError("dataset.path does not exist: " + cfg.dataset.path);
    if (gen) {
      GeneratorConfig g = *cfg.dataset.generator;
      try {
        g.validate();
      } catch (const std::exception& e) {
        throw ConfigError(std::string("dataset.generator: ") + e.what());
      }
    }
  }
  if (!cfg.model.checkpoint.empty() && !fs::is_regular_file(cfg.model.checkpoint))
    throw ConfigError("model.checkpoint does not exist: " + cfg.model.checkpoint);
  if (!(cfg.capital >= 0) || !std::isfinite(cfg.capital)) throw ConfigError("capital must be finite and >= 0");
  try {
    cfg.training.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  if (cfg.mode == Mode::kOracle && cfg.oracle_resolution < 1) throw ConfigError("oracle.resolution must be >= 1");
  if (cfg.mode == Mode::kReport) {
    if (cfg.report_runs.empty()) throw ConfigError("report needs report.runs");
    for (const auto& r : cfg.report_runs)
      if (!fs::is_regular_file(fs::path(r) / "report.csv")) throw ConfigError("no report.csv in run " + r);
    if (cfg.report_precision < 0 || cfg.report_precision > 17) throw ConfigError("report.precision out of range");
  }
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["mode"] = to_string(cfg.mode);
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["output"] = cfg.output;
  j["capital"] = cfg.capital;
  json d = json::object();
  if (cfg.dataset.generator) {
    GeneratorConfig g = *cfg.dataset.generator;
    g.seed = cfg.seed;
    d["generator"] = generator_json(g);
  }
  if (!cfg.dataset.path.empty()) d["path"] = cfg.dataset.path;
  if (cfg.dataset.split) {
    d["split"] = {{"train", cfg.dataset.split->train}, {"val", cfg.dataset.split->val}, {"test", cfg.dataset.split->test}};
    d["split_seed"] = cfg.dataset.split_seed.value_or(cfg.seed);
  }
  j["dataset"] = d;
  json m = cfg.model.overrides;
  m["kind"] = sysrisk::to_string(cfg.model.config.kind);
  m["preset"] = cfg.model.preset;
  m["checkpoint"] = cfg.model.checkpoint;
  j["model"] = m;
  j["training"] = training_json(cfg.training, cfg.grid_search);
  j["oracle"] = {{"resolution", cfg.oracle_resolution}, {"network", cfg.oracle_network}};
  j["report"] = {{"runs", cfg.report_runs}, {"precision", cfg.report_precision}};
  return j;
}

void run(ExperimentConfig cfg) {
  cfg.training.seed = cfg.seed;
  validate(cfg);
  const fs::path out(cfg.output);
  fs::create_directories(out);
  fs::remove(out / "error.json");
  WorkerPool pool(cfg.threads);
  WorkerPool* p = cfg.threads > 1 ? &pool : nullptr;
  switch (cfg.mode) {
    case Mode::kGenerate: run_generate(cfg, out); break;
    case Mode::kEvaluate: run_evaluate(cfg, out, p); break;
    case Mode::kTrainInner: run_train_inner(cfg, out, p); break;
    case Mode::kTrainOuter: run_train_outer(cfg, out, p); break;
    case Mode::kOracle: run_oracle(cfg, out); break;
    case Mode::kReport: run_report(cfg, out); break;
  }
}

void write_error(const std::string& dir, const std::string& kind, const std::string& message) {
  try {
    fs::create_directories(dir);
    json j;
    j["status"] = "error";
    j["kind"] = kind;
    j["message"] = message;
    write_text(fs::path(dir) / "error.json", j.dump(2) + "\n");
  } catch (const std::exception&) {
  }
}

}  // namespace sysrisk::cli
