#include "qnbm/synth.hpp"

#include <boost/math/distributions/normal.hpp>
#include "json.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "qnbm/error.hpp"

namespace qnbm::data {

namespace {

using nlohmann::json;

double load_profile(std::size_t h) {
  const double x = static_cast<double>(h);
  return 7.0 * std::sin(std::numbers::pi * (x - 5.0) / 14.0) * (h >= 5 && h <= 19 ? 1.0 : 0.4) - 2.0;
}

double solar_profile(std::size_t h) {
  const double v = std::sin(std::numbers::pi * (static_cast<double>(h) - 6.0) / 12.0);
  return h >= 6 && h <= 18 ? std::max(0.0, v) : 0.0;
}

}  // namespace

SynthSpec::SynthSpec() {
  for (std::size_t h = 0; h < 24; ++h) {
    const double x = static_cast<double>(h);
    base[h] = 30.0 + 8.0 * std::sin(2.0 * std::numbers::pi * (x - 8.0) / 24.0);
    sigma[h] = 4.0 + 3.0 * std::pow(std::sin(std::numbers::pi * x / 24.0), 2);
  }
}

void SynthSpec::validate() const {
  for (std::size_t h = 0; h < 24; ++h) {
    if (!(sigma[h] >= 0.0) || !std::isfinite(sigma[h]))
      throw ParameterError("synthetic sigma[" + std::to_string(h) + "] must be finite and >= 0");
    if (!std::isfinite(base[h])) throw ParameterError("synthetic base profile must be finite");
  }
  if (!std::isfinite(load_coef) || !std::isfinite(wind_coef))
    throw ParameterError("synthetic coefficients must be finite");
  (void)parse_date(start_date);
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json j;
  j["load_coef"] = spec.load_coef;
  j["wind_coef"] = spec.wind_coef;
  j["sigma"] = spec.sigma;
  j["base"] = spec.base;
  j["seed"] = spec.seed;
  j["start_date"] = spec.start_date;
  return j.dump(2);
}

SynthSpec synth_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  SynthSpec spec;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "load_coef" || key == "a") spec.load_coef = value.get<double>();
      else if (key == "wind_coef" || key == "b") spec.wind_coef = value.get<double>();
      else if (key == "sigma") {
        if (value.is_number()) spec.sigma.fill(value.get<double>());
        else spec.sigma = value.get<std::array<double, 24>>();
      } else if (key == "base") spec.base = value.get<std::array<double, 24>>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "start_date") spec.start_date = value.get<std::string>();
      else throw ConfigError("synthetic spec: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return synth_spec_from_json(ss.str());
}

void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << synth_spec_to_json(spec) << '\n';
}

TimeSeriesFrame synth_generate(num::Rng& rng, std::size_t n_days, const SynthSpec& spec) {
  if (n_days < 30) throw ParameterError("synthetic frames need at least 30 days, got " + std::to_string(n_days));
  spec.validate();
  const DayNumber first = parse_date(spec.start_date);
  const std::size_t hours = n_days * kHoursPerDay;

  TimeSeriesFrame frame;
  frame.timestamps.resize(hours);
  frame.price.resize(hours);
  frame.exogenous = {{"load_fcst", std::vector<double>(hours)},
                     {"wind_fcst", std::vector<double>(hours)},
                     {"solar_fcst", std::vector<double>(hours)}};
  auto& load = frame.exogenous[0].values;
  auto& wind = frame.exogenous[1].values;
  auto& solar = frame.exogenous[2].values;

  double load_level = 0.0;
  double wind_level = 0.0;
  for (std::size_t d = 0; d < n_days; ++d) {
    const DayNumber day = first + static_cast<DayNumber>(d);
    load_level = 0.85 * load_level + 3.0 * rng.normal();
    wind_level = 0.7 * wind_level + 5.0 * rng.normal();
    const double weekend = day_of_week(day) >= 5 ? -6.0 : 0.0;
    const double cloud = 0.3 + 0.7 * rng.uniform();
    double wind_drift = 0.0;
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      const std::size_t t = d * kHoursPerDay + h;
      frame.timestamps[t] = day * kSecondsPerDay + static_cast<std::int64_t>(h) * kSecondsPerHour;
      wind_drift += 0.8 * rng.normal();
      load[t] = 50.0 + load_profile(h) + weekend + load_level + 1.5 * rng.normal();
      wind[t] = std::max(0.0, 12.0 + wind_level + wind_drift);
      solar[t] = 25.0 * cloud * solar_profile(h);
      const double eps = rng.normal();
      frame.price[t] = spec.base[h] + spec.load_coef * load[t] + spec.wind_coef * wind[t] + spec.sigma[h] * eps;
    }
  }
  return frame;
}

TimeSeriesFrame synth_generate(std::size_t n_days, const SynthSpec& spec) {
  num::Rng rng(spec.seed);
  return synth_generate(rng, n_days, spec);
}

std::vector<double> synth_conditional_mean(const TimeSeriesFrame& frame, const SynthSpec& spec) {
  const auto& load = frame.series("load_fcst").values;
  const auto& wind = frame.series("wind_fcst").values;
  std::vector<double> mean(frame.hours());
  for (std::size_t t = 0; t < frame.hours(); ++t) {
    const std::size_t h = static_cast<std::size_t>((frame.timestamps[t] - day_of(frame.timestamps[t]) * kSecondsPerDay) / kSecondsPerHour);
    mean[t] = spec.base[h] + spec.load_coef * load[t] + spec.wind_coef * wind[t];
  }
  return mean;
}

QuantileForecast synth_true_quantiles(const TimeSeriesFrame& frame, const SynthSpec& spec,
                                      std::span<const DayNumber> days, std::span<const double> levels,
                                      std::size_t horizon) {
  validate_levels(levels);
  const auto mean = synth_conditional_mean(frame, spec);
  const boost::math::normal_distribution<double> standard;
  std::vector<double> z(levels.size());
  for (std::size_t g = 0; g < levels.size(); ++g) z[g] = boost::math::quantile(standard, levels[g]);

  QuantileForecast out;
  out.days.assign(days.begin(), days.end());
  out.horizon = horizon;
  out.levels.assign(levels.begin(), levels.end());
  out.values = num::Matrix(days.size(), horizon * levels.size());
  const DayNumber first = frame.first_day();
  for (std::size_t d = 0; d < days.size(); ++d) {
    if (days[d] < first || days[d] > frame.last_day())
      throw ParameterError("day " + format_date(days[d]) + " lies outside the synthetic frame");
    const auto offset = static_cast<std::size_t>(days[d] - first) * kHoursPerDay;
    for (std::size_t h = 0; h < horizon; ++h)
      for (std::size_t g = 0; g < levels.size(); ++g)
        out.at(d, h, g) = mean[offset + h] + spec.sigma[h] * z[g];
  }
  return out;
}

}  // namespace qnbm::data
