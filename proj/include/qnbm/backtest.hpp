#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "qnbm/ensemble.hpp"

namespace qnbm::train {

/// Rolling recalibration schedule over [test_start, test_end] (inclusive).
struct BacktestPlan {
  data::DayNumber test_start = 0;
  data::DayNumber test_end = 0;
  std::size_t cadence_days = 7;
  /// Training history per block in days; 0 uses everything available.
  std::size_t lookback_days = 0;
  /// Consecutive validation segments at the end of each training span.
  std::size_t folds = 4;

  std::size_t block_count() const;
  /// ConfigError for an empty span or zero cadence/folds.
  void validate() const;
};

struct BacktestBlock {
  std::size_t index = 0;
  data::DayNumber first = 0;
  data::DayNumber last = 0;
  data::DayNumber train_first = 0;
  data::DayNumber train_last = 0;
  std::size_t train_rows = 0;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::string> warnings;
};

struct BacktestResult {
  QuantileForecast forecast;
  num::Matrix targets;  // realised prices, one row per forecast day
  std::vector<BacktestBlock> blocks;
};

struct BacktestOptions {
  ensemble::EnsembleSpec members{.member_count = 1};
  /// When set, every block's member checkpoints are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const BacktestBlock&)> on_block;
};

/// For every block: retrain on the days strictly before the block (early
/// stopping on `plan.folds` sequential validation segments), then forecast
/// the block's days. Inputs of day d only reach prices up to day d-1, so no
/// forecast touches a price from its own delivery day or later.
/// ConfigError when the plan does not fit the frame's calendar.
BacktestResult backtest(const BacktestPlan& plan, const data::TimeSeriesFrame& frame,
                        const data::WindowConfig& windows, const model::ModelConfig& config, const TrainConfig& cfg,
                        const BacktestOptions& options = {});

}  // namespace qnbm::train
