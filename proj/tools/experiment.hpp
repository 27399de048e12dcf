#pragma once

// Declarative experiment runs: JSON config in, run directory out.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sysrisk/allocators.hpp"
#include "sysrisk/scenarios.hpp"
#include "sysrisk/training.hpp"

namespace sysrisk::cli {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Mode { kGenerate, kTrainInner, kTrainOuter, kEvaluate, kOracle, kReport };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);
const std::vector<std::string>& mode_names();

struct DatasetSpec {
  std::optional<GeneratorConfig> generator;
  std::string path;
  /// Without a split every scenario lands in a single "all" partition.
  std::optional<SplitFractions> split;
  std::optional<std::uint64_t> split_seed;
};

struct ModelSpec {
  std::string preset = "default";  // default | toy | plain
  ModelConfig config;
  /// Keys set explicitly in the config file; they override the preset.
  json overrides = json::object();
  std::string checkpoint;
};

struct ExperimentConfig {
  Mode mode = Mode::kEvaluate;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string output = "run";
  DatasetSpec dataset;
  ModelSpec model;
  TrainConfig training;
  bool grid_search = false;
  double capital = 0.0;
  int oracle_resolution = 20;
  std::size_t oracle_network = 0;
  std::vector<std::string> report_runs;
  int report_precision = 2;

  /// Directory that relative paths are resolved against.
  std::string base_dir = ".";
};

/// Parses a config document. Unknown keys are rejected.
ExperimentConfig parse_config(const json& doc, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

/// Mode-specific required fields and file existence.
void validate(const ExperimentConfig& cfg);

/// Fully resolved echo, every default spelled out.
json to_json(const ExperimentConfig& cfg);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

/// Runs the experiment and writes its artifacts into cfg.output.
void run(ExperimentConfig cfg);

/// Writes error.json into `dir` (created if needed); best effort.
void write_error(const std::string& dir, const std::string& kind, const std::string& message);

}  // namespace sysrisk::cli
