#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qnbm/dataset.hpp"
#include "qnbm/forecast.hpp"
#include "qnbm/rng.hpp"

namespace qnbm::data {

/// Parameters of the synthetic market.
///
/// Hourly price = base[h] + load_coef·load + wind_coef·wind + sigma[h]·ε with
/// ε ~ N(0, 1) independent across hours, so conditional quantiles given the
/// day-ahead load and wind forecasts are Gaussian with known moments.
/// Load and wind carry day-level AR(1) shocks plus intra-day variation;
/// solar is generated as a distractor with no price effect.
struct SynthSpec {
  double load_coef = 0.8;
  double wind_coef = -0.6;
  std::array<double, 24> sigma{};
  std::array<double, 24> base{};
  std::uint64_t seed = 1;
  std::string start_date = "2019-01-01";

  SynthSpec();
  void validate() const;
};

std::string synth_spec_to_json(const SynthSpec& spec);
/// Rejects unknown keys; missing keys keep their defaults.
SynthSpec synth_spec_from_json(const std::string& text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path);

TimeSeriesFrame synth_generate(num::Rng& rng, std::size_t n_days, const SynthSpec& spec);
/// Uses an Rng seeded with spec.seed.
TimeSeriesFrame synth_generate(std::size_t n_days, const SynthSpec& spec);

/// base[h] + load_coef·load + wind_coef·wind for every hour of the frame.
std::vector<double> synth_conditional_mean(const TimeSeriesFrame& frame, const SynthSpec& spec);

/// Analytic conditional quantiles for the listed delivery days.
QuantileForecast synth_true_quantiles(const TimeSeriesFrame& frame, const SynthSpec& spec,
                                      std::span<const DayNumber> days, std::span<const double> levels,
                                      std::size_t horizon = 24);

}  // namespace qnbm::data
