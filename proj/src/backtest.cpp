#include "qnbm/backtest.hpp"

#include <algorithm>
#include <cstdio>

#include "qnbm/error.hpp"

namespace qnbm::train {

namespace {

constexpr std::size_t kMinTrainRows = 8;

std::string block_name(std::size_t block) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "block_%03zu", block);
  return buf;
}

}  // namespace

std::size_t BacktestPlan::block_count() const {
  const auto span = static_cast<std::size_t>(test_end - test_start + 1);
  return (span + cadence_days - 1) / cadence_days;
}

void BacktestPlan::validate() const {
  if (test_end < test_start)
    throw ConfigError("backtest ends (" + data::format_date(test_end) + ") before it starts (" +
                      data::format_date(test_start) + ")");
  if (cadence_days == 0) throw ConfigError("backtest cadence must be at least one day");
  if (folds == 0) throw ConfigError("backtest folds must be positive");
}

BacktestResult backtest(const BacktestPlan& plan, const data::TimeSeriesFrame& frame,
                        const data::WindowConfig& windows, const model::ModelConfig& config, const TrainConfig& cfg,
                        const BacktestOptions& options) {
  plan.validate();
  windows.validate();
  frame.validate();
  const data::DayNumber first_target = frame.first_day() + windows.max_lag_days();
  if (plan.test_end > frame.last_day()) {
    throw ConfigError("backtest end " + data::format_date(plan.test_end) + " is after the last frame day " +
                      data::format_date(frame.last_day()));
  }
  if (plan.test_start < first_target + static_cast<data::DayNumber>(kMinTrainRows)) {
    throw ConfigError("backtest start " + data::format_date(plan.test_start) + " leaves fewer than " +
                      std::to_string(kMinTrainRows) + " training days after the " +
                      std::to_string(windows.max_lag_days()) + "-day lag warm-up");
  }

  TrainConfig block_cfg = cfg;
  block_cfg.validation = ValidationScheme::SequentialFolds;
  block_cfg.folds = plan.folds;

  BacktestResult result;
  std::vector<QuantileForecast> parts;
  std::vector<num::Matrix> targets;
  for (std::size_t b = 0; b < plan.block_count(); ++b) {
    BacktestBlock block;
    block.index = b;
    block.first = plan.test_start + static_cast<data::DayNumber>(b * plan.cadence_days);
    block.last = std::min(plan.test_end, block.first + static_cast<data::DayNumber>(plan.cadence_days) - 1);
    block.train_last = block.first - 1;
    block.train_first = first_target;
    if (plan.lookback_days > 0)
      block.train_first = std::max(first_target, block.first - static_cast<data::DayNumber>(plan.lookback_days));

    // Nothing after the block's last day is visible to this block.
    const data::TimeSeriesFrame visible = data::slice_days(frame, frame.first_day(), block.last);
    data::WindowConfig wc = windows;
    wc.age_anchor = data::AgeAnchor{block.train_first, block.train_last};
    const data::WindowedDataset all = data::build_windows(visible, wc);
    const data::WindowedDataset train_rows = data::select_days(all, block.train_first, block.train_last);
    const data::WindowedDataset target = data::select_days(all, block.first, block.last);
    block.train_rows = train_rows.size();
    if (train_rows.size() < kMinTrainRows)
      throw ConfigError("block " + std::to_string(b) + " has only " + std::to_string(train_rows.size()) +
                        " training rows");

    auto ens = ensemble::run_ensemble(config, train_rows, target, block_cfg, options.members);
    block.warnings = ens.warnings;
    if (options.checkpoint_dir) {
      const std::string prefix = block_name(b);
      if (options.members.member_count == 1) {
        std::filesystem::create_directories(*options.checkpoint_dir);
        block.checkpoints.push_back(*options.checkpoint_dir / (prefix + ".ckpt"));
        model::save_checkpoint(*ens.members.front().params, block.checkpoints.back());
      } else {
        block.checkpoints = ensemble::save_members(ens, *options.checkpoint_dir, prefix + "_member_");
      }
    }
    parts.push_back(std::move(ens.forecast));
    targets.push_back(target.targets);
    if (options.on_block) options.on_block(block);
    result.blocks.push_back(std::move(block));
  }

  result.forecast = concatenate(parts);
  std::size_t rows = 0;
  for (const auto& t : targets) rows += t.rows();
  result.targets = num::Matrix(rows, windows.horizon);
  std::size_t r = 0;
  for (const auto& t : targets)
    for (std::size_t i = 0; i < t.rows(); ++i, ++r) std::copy(t.row(i).begin(), t.row(i).end(), result.targets.row(r).begin());
  return result;
}

}  // namespace qnbm::train
