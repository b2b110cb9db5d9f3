#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qnbm/backtest.hpp"
#include "qnbm/synth.hpp"

namespace qnbm::cli {

struct DataSection {
  std::filesystem::path csv;
  /// Optional day ranges (YYYY-MM-DD); empty means the frame's span.
  std::string train_start, train_end, test_start, test_end;
};

struct SynthSection {
  std::size_t n_days = 500;
  data::SynthSpec spec;
  /// When set, synthetic parameters are read from this JSON file instead.
  std::filesystem::path spec_file;
};

struct BacktestSection {
  std::string test_start, test_end;
  std::size_t cadence_days = 7;
  std::size_t lookback_days = 0;
  std::size_t folds = 4;
};

struct EvaluateSection {
  std::vector<std::filesystem::path> forecasts;
  std::vector<std::string> names;
  std::vector<int> intervals{50, 90, 98};
  std::string loss_norm = "l1";
};

struct ExplainSection {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<double> levels{0.05, 0.5, 0.95};
  std::vector<std::size_t> hours;          // empty: every hour
  std::vector<std::string> features;       // empty: every feature
  std::size_t points = 201;
};

/// Everything a subcommand needs, loaded from one JSON file. Unknown keys are
/// rejected at every level; missing keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  std::string layout = "long";
  DataSection data;
  SynthSection synth;
  model::ModelConfig model;
  data::WindowConfig windows;
  train::TrainConfig train;
  std::optional<train::GridSpec> grid;
  BacktestSection backtest;
  ensemble::EnsembleSpec ensemble{.member_count = 1};
  EvaluateSection evaluate;
  ExplainSection explain;

  /// ConfigError describing the first invalid field.
  void validate() const;
};

/// ConfigError on malformed JSON, unknown keys or wrong types.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON of the fully resolved configuration; parses back to an
/// identical RunConfig.
std::string run_config_json(const RunConfig& config);

train::BacktestPlan backtest_plan(const RunConfig& config);

}  // namespace qnbm::cli
