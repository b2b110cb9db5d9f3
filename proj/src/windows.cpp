#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "qnbm/dataset.hpp"
#include "qnbm/error.hpp"
#include "qnbm/format.hpp"

namespace qnbm::data {

namespace {

constexpr std::string_view kLagPrefix = "price_lag";

std::string two_digits(int v) {
  std::string s = std::to_string(v);
  return v < 10 ? "0" + s : s;
}

}  // namespace

std::vector<std::string> calendar_feature_names(const CalendarOptions& options) {
  std::vector<std::string> names;
  if (options.day_of_week) {
    names.emplace_back("dow_sin");
    names.emplace_back("dow_cos");
  }
  if (options.series_age) names.emplace_back("age");
  return names;
}

num::Matrix calendar_features(std::span<const DayNumber> days, const CalendarOptions& options,
                              const AgeAnchor& anchor) {
  const auto names = calendar_feature_names(options);
  num::Matrix out(days.size(), names.size());
  const double span = static_cast<double>(anchor.last_day - anchor.first_day);
  for (std::size_t r = 0; r < days.size(); ++r) {
    std::size_t c = 0;
    if (options.day_of_week) {
      const double angle = 2.0 * std::numbers::pi * day_of_week(days[r]) / 7.0;
      out(r, c++) = std::sin(angle);
      out(r, c++) = std::cos(angle);
    }
    if (options.series_age) {
      out(r, c++) = span > 0.0 ? static_cast<double>(days[r] - anchor.first_day) / span : 0.0;
    }
  }
  return out;
}

int WindowConfig::max_lag_days() const {
  return price_lag_days.empty() ? 0 : *std::max_element(price_lag_days.begin(), price_lag_days.end());
}

std::size_t WindowConfig::feature_count() const {
  return kHoursPerDay * (price_lag_days.size() + exogenous.size()) + calendar_feature_names(calendar).size();
}

void WindowConfig::validate() const {
  if (horizon < 1 || horizon > kHoursPerDay)
    throw ConfigError("horizon must lie in [1, 24], got " + std::to_string(horizon));
  std::set<int> seen;
  for (int lag : price_lag_days) {
    if (lag <= 0) throw ConfigError("price lag offsets must be positive, got " + std::to_string(lag));
    if (!seen.insert(lag).second) throw ConfigError("duplicate price lag " + std::to_string(lag));
  }
  std::set<std::string> names;
  const auto calendar_names = calendar_feature_names(CalendarOptions{});
  for (const auto& name : exogenous) {
    if (name.empty() || name == "price" || name == "timestamp" || name.starts_with(kLagPrefix) ||
        std::find(calendar_names.begin(), calendar_names.end(), name) != calendar_names.end())
      throw ConfigError("invalid exogenous series name '" + name + "'");
    if (!names.insert(name).second) throw ConfigError("duplicate exogenous series '" + name + "'");
  }
  if (feature_count() == 0) throw ConfigError("window configuration yields no features");
  if (age_anchor && age_anchor->last_day < age_anchor->first_day)
    throw ConfigError("age anchor ends before it starts");
}

std::string feature_name(const FeatureRef& ref) {
  switch (ref.kind) {
    case FeatureKind::PriceLag:
      return std::string(kLagPrefix) + std::to_string(ref.lag_days) + "_h" + two_digits(ref.hour);
    case FeatureKind::Exogenous:
      return ref.source + "_h" + two_digits(ref.hour);
    case FeatureKind::Calendar:
      return ref.source;
  }
  return {};
}

FeatureRef decode_feature_name(std::string_view name) {
  const auto calendar = calendar_feature_names(CalendarOptions{});
  if (std::find(calendar.begin(), calendar.end(), name) != calendar.end())
    return {FeatureKind::Calendar, std::string(name), 0, -1};

  auto bad = [&] { return DataError("unrecognized feature name '" + std::string(name) + "'"); };
  if (name.size() < 5 || name[name.size() - 4] != '_' || name[name.size() - 3] != 'h') throw bad();
  const char d1 = name[name.size() - 2];
  const char d2 = name[name.size() - 1];
  if (d1 < '0' || d1 > '9' || d2 < '0' || d2 > '9') throw bad();
  const int hour = (d1 - '0') * 10 + (d2 - '0');
  if (hour >= static_cast<int>(kHoursPerDay)) throw bad();
  const std::string_view stem = name.substr(0, name.size() - 4);
  if (stem.starts_with(kLagPrefix)) {
    const std::string_view digits = stem.substr(kLagPrefix.size());
    if (digits.empty() || digits.front() == '0') throw bad();
    int lag = 0;
    for (char c : digits) {
      if (c < '0' || c > '9') throw bad();
      lag = lag * 10 + (c - '0');
    }
    return {FeatureKind::PriceLag, "price", lag, hour};
  }
  return {FeatureKind::Exogenous, std::string(stem), 0, hour};
}

WindowedDataset build_windows(const TimeSeriesFrame& frame, const WindowConfig& config) {
  config.validate();
  frame.validate();
  const std::size_t days = frame.days();
  const auto max_lag = static_cast<std::size_t>(config.max_lag_days());
  if (days < max_lag + 1) {
    throw DataError("insufficient history: windows need at least " + std::to_string(max_lag + 1) +
                    " days, frame has " + std::to_string(days));
  }
  std::vector<const std::vector<double>*> exo;
  for (const auto& name : config.exogenous) exo.push_back(&frame.series(name).values);

  std::vector<int> lags = config.price_lag_days;
  std::sort(lags.begin(), lags.end());

  WindowedDataset out;
  for (int lag : lags)
    for (int h = 0; h < static_cast<int>(kHoursPerDay); ++h)
      out.feature_names.push_back(feature_name({FeatureKind::PriceLag, "price", lag, h}));
  out.price_lag_columns = out.feature_names.size();
  for (const auto& name : config.exogenous)
    for (int h = 0; h < static_cast<int>(kHoursPerDay); ++h)
      out.feature_names.push_back(feature_name({FeatureKind::Exogenous, name, 0, h}));
  for (auto& name : calendar_feature_names(config.calendar)) out.feature_names.push_back(std::move(name));

  const std::size_t rows = days - max_lag;
  const std::size_t n_f = out.feature_names.size();
  const DayNumber first_day = frame.first_day();
  out.inputs = num::Matrix(rows, n_f);
  out.targets = num::Matrix(rows, config.horizon);
  out.days.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) out.days[r] = first_day + static_cast<DayNumber>(r + max_lag);

  const AgeAnchor anchor = config.age_anchor.value_or(AgeAnchor{first_day, frame.last_day()});
  const num::Matrix calendar = calendar_features(out.days, config.calendar, anchor);

  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t day = r + max_lag;
    auto x = out.inputs.row(r);
    std::size_t c = 0;
    for (int lag : lags) {
      const std::size_t base = (day - static_cast<std::size_t>(lag)) * kHoursPerDay;
      for (std::size_t h = 0; h < kHoursPerDay; ++h) x[c++] = frame.price[base + h];
    }
    const std::size_t today = day * kHoursPerDay;
    for (const auto* series : exo)
      for (std::size_t h = 0; h < kHoursPerDay; ++h) x[c++] = (*series)[today + h];
    for (std::size_t k = 0; k < calendar.cols(); ++k) x[c++] = calendar(r, k);
    for (std::size_t h = 0; h < config.horizon; ++h) out.targets(r, h) = frame.price[today + h];
  }
  return out;
}

WindowedDataset select_rows(const WindowedDataset& data, std::span<const std::size_t> rows) {
  WindowedDataset out;
  out.feature_names = data.feature_names;
  out.price_lag_columns = data.price_lag_columns;
  out.inputs = num::Matrix(rows.size(), data.feature_count());
  out.targets = num::Matrix(rows.size(), data.horizon());
  out.days.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= data.size()) throw ShapeError("row index " + std::to_string(r) + " out of range");
    std::copy(data.inputs.row(r).begin(), data.inputs.row(r).end(), out.inputs.row(i).begin());
    std::copy(data.targets.row(r).begin(), data.targets.row(r).end(), out.targets.row(i).begin());
    out.days.push_back(data.days[r]);
  }
  return out;
}

WindowedDataset select_days(const WindowedDataset& data, DayNumber first, DayNumber last) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < data.size(); ++r)
    if (data.days[r] >= first && data.days[r] <= last) rows.push_back(r);
  return select_rows(data, rows);
}

std::uint64_t feature_names_hash(std::span<const std::string> names) {
  std::uint64_t h = fnv1a64("");
  for (const auto& name : names) {
    h = fnv1a64(name, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

}  // namespace qnbm::data
