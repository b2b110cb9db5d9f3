#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qnbm/model.hpp"

namespace qnbm::interpret {

inline constexpr std::size_t kDefaultGridPoints = 201;

/// Contribution of one feature to one quantile output, over a value grid.
struct ShapeCurve {
  std::string feature;
  std::size_t feature_index = 0;
  double level = 0.0;
  std::size_t hour = 0;
  std::size_t member = 0;
  std::vector<double> x;             // grid, raw feature units
  std::vector<double> shape;         // f_i at the grid, model units
  std::vector<double> contribution;  // V[h,γ,i]·f_i, price units
  /// True for instance-normalized price lags: x is then in units of the
  /// row's own standard deviation and contributions in units of s_d.
  bool normalized_units = false;
  std::vector<std::string> warnings;
};

/// Evenly spaced grid over the feature's training range (for instance-
/// normalized lags: [-3, 3] standard deviations).
std::vector<double> default_grid(const model::QnbmParams& params, std::size_t feature,
                                 std::size_t points = kDefaultGridPoints);

/// Evaluates the learned shape function of `feature` on `grid`. Grid points
/// beyond the training range widened by `expansion`·(max − min) are kept but
/// annotated with a warning. ParameterError for an unknown feature, hour or level.
ShapeCurve extract_shape(const model::QnbmParams& params, std::size_t feature, double level, std::size_t hour,
                         std::span<const double> grid, std::size_t member = 0, double expansion = 0.0);

struct ShapeBundle {
  std::vector<std::string> feature_names;
  std::uint64_t feature_names_hash = 0;
  std::vector<std::vector<double>> grids;  // per selected feature, shared by every member
  std::vector<std::size_t> features;       // selected feature indices
  std::vector<ShapeCurve> curves;          // order: feature, level, hour, member
};

/// Curves for every member × feature × level × hour. Features default to all.
/// IncompatibleError when members disagree on feature names or are not QNBM.
ShapeBundle extract_all(std::span<const model::ModelParams> members, std::span<const double> levels,
                        std::span<const std::size_t> hours, std::span<const std::size_t> features = {},
                        std::size_t points = kDefaultGridPoints);

/// One long CSV per feature (x, contribution, member, feature, gamma, hour)
/// plus manifest.json; returns the CSV paths.
std::vector<std::filesystem::path> save_bundle(const ShapeBundle& bundle, const std::filesystem::path& dir);

/// Least-squares slope of y on x restricted to the central `fraction` of the x range.
double central_slope(std::span<const double> x, std::span<const double> y, double fraction = 0.8);

/// Number of slope changes larger than `tolerance` along the grid.
std::size_t count_breakpoints(std::span<const double> x, std::span<const double> y, double tolerance = 1e-9);

}  // namespace qnbm::interpret
