#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "qnbm/dataset.hpp"
#include "qnbm/matrix.hpp"

namespace qnbm {

/// The 99 percentile levels 0.01, 0.02, …, 0.99.
std::vector<double> percentile_levels();

/// Throws ParameterError unless levels are strictly increasing inside (0, 1).
void validate_levels(std::span<const double> levels);

/// Index of `level` in `levels` (tolerance 1e-9), or npos when absent.
std::size_t find_level(std::span<const double> levels, double level);

/// Predicted quantiles for a run of delivery days.
///
/// Row d of `values` holds the H × |Γ| block with column index h·|Γ| + g.
struct QuantileForecast {
  std::vector<data::DayNumber> days;
  std::size_t horizon = 0;
  std::vector<double> levels;
  num::Matrix values;

  std::size_t level_count() const noexcept { return levels.size(); }
  std::size_t size() const noexcept { return values.rows(); }
  double at(std::size_t day, std::size_t hour, std::size_t level) const {
    return values(day, hour * levels.size() + level);
  }
  double& at(std::size_t day, std::size_t hour, std::size_t level) {
    return values(day, hour * levels.size() + level);
  }
  /// Throws ShapeError when the parts disagree.
  void validate() const;
};

/// Sorts every (day, hour) block of `values` in place.
void sort_quantile_blocks(num::Matrix& values, std::size_t horizon, std::size_t level_count);
void sort_quantiles(QuantileForecast& forecast);
/// Number of (day, hour, g) with q[g+1] < q[g].
std::size_t monotonicity_violations(const QuantileForecast& forecast);

QuantileForecast concatenate(std::span<const QuantileForecast> parts);

enum class ForecastCsvLayout { Long, Wide };

/// Long layout: "day,hour,gamma,value" one row per (day, hour, γ).
/// Wide layout: "day,hour,q<γ>…" one row per (day, hour).
void write_forecast_csv(const QuantileForecast& forecast, std::ostream& out,
                        ForecastCsvLayout layout = ForecastCsvLayout::Long);
void save_forecast_csv(const QuantileForecast& forecast, const std::filesystem::path& path,
                       ForecastCsvLayout layout = ForecastCsvLayout::Long);
/// Reads the long layout back. Rows may come in any order but must cover a
/// full day × hour × level grid.
QuantileForecast read_forecast_csv(std::istream& in);
QuantileForecast load_forecast_csv(const std::filesystem::path& path);

}  // namespace qnbm
