#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "experiment.hpp"

namespace cli = sysrisk::cli;

int main(int argc, char** argv) {
  CLI::App app{"Bailout capital experiments on stochastic financial networks"};
  std::string mode_pos, mode_opt, config_path, out;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("command", mode_pos, "generate | train-inner | train-outer | evaluate | oracle | report")
      ->check(CLI::IsMember(cli::mode_names()));
  app.add_option("--mode", mode_opt, "Same as the positional mode")->check(CLI::IsMember(cli::mode_names()));
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for data, splits, initialization and batching");
  auto* out_opt = app.add_option("--out", out, "Run directory");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::string error_dir = out.empty() ? "run" : out;
  try {
    cli::ExperimentConfig cfg = config_path.empty() ? cli::parse_config(cli::json::object()) : cli::load_config(config_path);
    if (!mode_pos.empty() && !mode_opt.empty() && mode_pos != mode_opt)
      throw cli::ConfigError("conflicting modes '" + mode_pos + "' and '" + mode_opt + "'");
    if (!mode_pos.empty()) cfg.mode = cli::mode_from_string(mode_pos);
    if (!mode_opt.empty()) cfg.mode = cli::mode_from_string(mode_opt);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (out_opt->count() > 0) cfg.output = out;
    if (threads_opt->count() > 0) cfg.threads = threads;
    error_dir = cfg.output;
    cli::run(cfg);
  } catch (const cli::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    cli::write_error(error_dir, "config", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    cli::write_error(error_dir, "runtime", e.what());
    return 1;
  }
  return 0;
}
