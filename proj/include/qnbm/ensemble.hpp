#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qnbm/forecast.hpp"
#include "qnbm/training.hpp"

namespace qnbm::ensemble {

struct EnsembleSpec {
  std::size_t member_count = 5;
  std::uint64_t base_seed = 0;
  /// Re-sort every (day, hour) block after averaging.
  bool sort_after = true;
  /// Members trained concurrently; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

/// Equal-weight quantile averaging. ShapeError naming the first member whose
/// days, horizon or levels differ from member 0.
QuantileForecast aggregate(std::span<const QuantileForecast> members, bool sort_after = true);

struct Member {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string message;  // divergence diagnostic
  std::optional<model::ModelParams> params;
  train::History history;
};

struct EnsembleResult {
  QuantileForecast forecast;
  std::vector<Member> members;
  /// Forecasts of the members that trained successfully, in member order.
  std::vector<QuantileForecast> member_forecasts;
  std::vector<std::string> warnings;
};

/// Trains member_count models with seeds base_seed, base_seed+1, … and
/// averages their forecasts for `target`. Diverged members are skipped with a
/// warning; NumericError when every member diverges.
EnsembleResult run_ensemble(const model::ModelConfig& config, const data::WindowedDataset& train_data,
                            const data::WindowedDataset& target, const train::TrainConfig& cfg,
                            const EnsembleSpec& spec);

/// Writes member_<i>.ckpt for every trained member and returns the paths.
std::vector<std::filesystem::path> save_members(const EnsembleResult& result, const std::filesystem::path& dir,
                                                const std::string& prefix = "member_");

/// JSON manifest: spec, per-member seed, status and checkpoint file.
std::string manifest_json(const EnsembleResult& result, const EnsembleSpec& spec,
                          std::span<const std::filesystem::path> checkpoints = {});

}  // namespace qnbm::ensemble
