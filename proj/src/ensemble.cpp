#include "qnbm/ensemble.hpp"

#include <algorithm>
#include <future>

#include "json.hpp"
#include "qnbm/error.hpp"

namespace qnbm::ensemble {

void EnsembleSpec::validate() const {
  if (member_count == 0) throw ConfigError("ensemble member_count must be at least 1");
  if (threads == 0) throw ConfigError("ensemble threads must be at least 1");
}

QuantileForecast aggregate(std::span<const QuantileForecast> members, bool sort_after) {
  if (members.empty()) throw ParameterError("cannot aggregate an empty ensemble");
  const QuantileForecast& first = members.front();
  first.validate();
  QuantileForecast out = first;
  for (std::size_t m = 1; m < members.size(); ++m) {
    const QuantileForecast& f = members[m];
    if (f.days != first.days || f.horizon != first.horizon || f.levels != first.levels ||
        f.values.rows() != first.values.rows() || f.values.cols() != first.values.cols()) {
      throw ShapeError("ensemble member " + std::to_string(m) + " does not match member 0 (days, horizon or levels)");
    }
    num::axpy(out.values, f.values);
  }
  out.values = num::scale(out.values, 1.0 / static_cast<double>(members.size()));
  if (sort_after) sort_quantiles(out);
  return out;
}

EnsembleResult run_ensemble(const model::ModelConfig& config, const data::WindowedDataset& train_data,
                            const data::WindowedDataset& target, const train::TrainConfig& cfg,
                            const EnsembleSpec& spec) {
  spec.validate();
  EnsembleResult result;
  result.members.resize(spec.member_count);

  auto train_member = [&](std::size_t i) {
    Member& m = result.members[i];
    m.index = i;
    m.seed = spec.base_seed + i;
    train::TrainConfig member_cfg = cfg;
    member_cfg.seed = m.seed;
    try {
      auto fitted = train::fit(config, train_data, member_cfg);
      m.params = std::move(fitted.params);
      m.history = std::move(fitted.history);
    } catch (const NumericError& e) {
      m.diverged = true;
      m.message = e.what();
    }
  };

  for (std::size_t start = 0; start < spec.member_count; start += spec.threads) {
    const std::size_t end = std::min(spec.member_count, start + spec.threads);
    if (end - start == 1) {
      train_member(start);
      continue;
    }
    std::vector<std::future<void>> jobs;
    for (std::size_t i = start; i < end; ++i) jobs.push_back(std::async(std::launch::async, train_member, i));
    for (auto& j : jobs) j.get();
  }

  for (const Member& m : result.members) {
    if (m.diverged) {
      result.warnings.push_back("member " + std::to_string(m.index) + " (seed " + std::to_string(m.seed) +
                                ") skipped: " + m.message);
      continue;
    }
    result.member_forecasts.push_back(model::forecast(*m.params, target));
  }
  if (result.member_forecasts.empty()) throw NumericError("all " + std::to_string(spec.member_count) + " ensemble members diverged");
  result.forecast = aggregate(result.member_forecasts, spec.sort_after);
  return result;
}

std::vector<std::filesystem::path> save_members(const EnsembleResult& result, const std::filesystem::path& dir,
                                                const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (const Member& m : result.members) {
    if (!m.params) continue;
    paths.push_back(dir / (prefix + std::to_string(m.index) + ".ckpt"));
    model::save_checkpoint(*m.params, paths.back());
  }
  return paths;
}

std::string manifest_json(const EnsembleResult& result, const EnsembleSpec& spec,
                          std::span<const std::filesystem::path> checkpoints) {
  nlohmann::json j;
  j["member_count"] = spec.member_count;
  j["base_seed"] = spec.base_seed;
  j["aggregation"] = "quantile-average";
  j["sort_after"] = spec.sort_after;
  j["members"] = nlohmann::json::array();
  std::size_t next = 0;
  for (const Member& m : result.members) {
    nlohmann::json e{{"index", m.index}, {"seed", m.seed}, {"status", m.diverged ? "diverged" : "trained"}};
    if (m.diverged) e["message"] = m.message;
    else {
      e["best_epoch"] = m.history.best_epoch;
      e["best_val_loss"] = m.history.best_val_loss;
      if (next < checkpoints.size()) e["checkpoint"] = checkpoints[next++].filename().string();
    }
    j["members"].push_back(std::move(e));
  }
  j["warnings"] = result.warnings;
  return j.dump(2);
}

}  // namespace qnbm::ensemble
