#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qnbm/matrix.hpp"

namespace qnbm::data {

/// Seconds since 1970-01-01T00:00 on the file's own fixed-offset clock.
using Timestamp = std::int64_t;
/// Days since 1970-01-01 on the same clock.
using DayNumber = std::int64_t;

inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::size_t kHoursPerDay = 24;

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Aligned hourly price and exogenous series covering whole days.
struct TimeSeriesFrame {
  std::vector<Timestamp> timestamps;
  std::vector<double> price;
  std::vector<Series> exogenous;
  int utc_offset_minutes = 0;

  std::size_t hours() const noexcept { return timestamps.size(); }
  std::size_t days() const noexcept { return timestamps.size() / kHoursPerDay; }
  DayNumber first_day() const;
  DayNumber last_day() const { return first_day() + static_cast<DayNumber>(days()) - 1; }

  const Series& series(std::string_view name) const;
  Series& series(std::string_view name);
  bool has_series(std::string_view name) const;

  /// Throws DataError when lengths disagree, steps are not hourly, or the
  /// frame does not start at midnight / cover whole days.
  void validate() const;
};

/// Days [first, last] of a frame (clamped to its span).
TimeSeriesFrame slice_days(const TimeSeriesFrame& frame, DayNumber first, DayNumber last);

struct CsvOptions {
  std::vector<std::string> required_columns{"timestamp", "price", "load_fcst", "wind_fcst",
                                            "solar_fcst"};
  /// Longest run of missing hours (absent rows or empty/NaN cells) that is
  /// linearly interpolated; longer runs are rejected.
  std::size_t fill_limit_hours = 3;
  bool linear_fill = true;
};

TimeSeriesFrame load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
TimeSeriesFrame parse_csv(std::istream& in, const CsvOptions& options,
                          std::string_view source = "<stream>");
void write_csv(const TimeSeriesFrame& frame, std::ostream& out);
void save_csv(const TimeSeriesFrame& frame, const std::filesystem::path& path);

/// Parses ISO-8601 "YYYY-MM-DD[T ]HH:MM[:SS][Z|±HH:MM]". The returned
/// timestamp is on the local clock; the offset (minutes) is reported
/// separately. Throws DataError on malformed input.
Timestamp parse_timestamp(std::string_view text, int* offset_minutes = nullptr);
std::string format_timestamp(Timestamp ts, int offset_minutes = 0);
DayNumber parse_date(std::string_view text);
std::string format_date(DayNumber day);
inline DayNumber day_of(Timestamp ts) {
  return ts >= 0 ? ts / kSecondsPerDay : -((-ts + kSecondsPerDay - 1) / kSecondsPerDay);
}
/// Monday = 0 … Sunday = 6.
int day_of_week(DayNumber day);

// ---------------------------------------------------------------------------
// Calendar features

struct CalendarOptions {
  bool day_of_week = true;
  bool series_age = true;
};

/// Day range over which the series-age feature runs from 0 to 1.
struct AgeAnchor {
  DayNumber first_day = 0;
  DayNumber last_day = 0;
};

std::vector<std::string> calendar_feature_names(const CalendarOptions& options);

/// One row per day: [dow_sin, dow_cos] (angle 2π·dow/7) and/or the series
/// age (day − first)/(last − first), which exceeds 1 past the anchor.
num::Matrix calendar_features(std::span<const DayNumber> days, const CalendarOptions& options,
                              const AgeAnchor& anchor);

// ---------------------------------------------------------------------------
// Sliding windows

struct WindowConfig {
  std::vector<int> price_lag_days{1, 2, 7};
  std::size_t horizon = 24;
  std::vector<std::string> exogenous{"load_fcst", "wind_fcst", "solar_fcst"};
  CalendarOptions calendar;
  /// Defaults to the full span of the frame being windowed.
  std::optional<AgeAnchor> age_anchor;

  int max_lag_days() const;
  std::size_t max_lag_hours() const { return static_cast<std::size_t>(max_lag_days()) * kHoursPerDay; }
  std::size_t feature_count() const;
  void validate() const;
};

enum class FeatureKind { PriceLag, Exogenous, Calendar };

struct FeatureRef {
  FeatureKind kind = FeatureKind::Calendar;
  std::string source;  // "price", exogenous series name, or calendar feature name
  int lag_days = 0;    // price lags only
  int hour = -1;       // -1 for calendar features

  friend bool operator==(const FeatureRef&, const FeatureRef&) = default;
};

std::string feature_name(const FeatureRef& ref);
/// Inverse of feature_name. Throws DataError for names it did not produce.
FeatureRef decode_feature_name(std::string_view name);

struct WindowedDataset {
  num::Matrix inputs;   // days × n_f
  num::Matrix targets;  // days × H
  std::vector<std::string> feature_names;
  std::vector<DayNumber> days;  // delivery day of each row
  /// Price-lag columns occupy [0, price_lag_columns).
  std::size_t price_lag_columns = 0;

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t feature_count() const noexcept { return inputs.cols(); }
  std::size_t horizon() const noexcept { return targets.cols(); }
};

WindowedDataset build_windows(const TimeSeriesFrame& frame, const WindowConfig& config);

WindowedDataset select_rows(const WindowedDataset& data, std::span<const std::size_t> rows);
/// Rows whose delivery day lies in [first, last].
WindowedDataset select_days(const WindowedDataset& data, DayNumber first, DayNumber last);

/// FNV-1a 64 over the newline-joined names; stored in checkpoints.
std::uint64_t feature_names_hash(std::span<const std::string> names);

}  // namespace qnbm::data
