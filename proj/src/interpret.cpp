#include "qnbm/interpret.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "qnbm/error.hpp"
#include "qnbm/format.hpp"

namespace qnbm::interpret {

namespace {

constexpr double kNormalizedHalfWidth = 3.0;

bool in_revin_group(const model::QnbmParams& p, std::size_t feature) {
  const auto& r = p.common.scaling.revin;
  return r.enabled && feature >= r.first_column && feature < r.first_column + r.column_count;
}

const model::QnbmParams& as_qnbm(const model::ModelParams& m, std::size_t member) {
  const auto* p = std::get_if<model::QnbmParams>(&m);
  if (!p) throw IncompatibleError("member " + std::to_string(member) + " is not an additive QNBM model");
  return *p;
}

std::vector<double> linspace(double lo, double hi, std::size_t points) {
  if (points < 2) throw ParameterError("a grid needs at least 2 points");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  g.back() = hi;
  return g;
}

std::string file_safe(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  return s;
}

}  // namespace

std::vector<double> default_grid(const model::QnbmParams& params, std::size_t feature, std::size_t points) {
  if (feature >= params.feature_count()) throw ParameterError("feature index " + std::to_string(feature) + " out of range");
  if (in_revin_group(params, feature)) return linspace(-kNormalizedHalfWidth, kNormalizedHalfWidth, points);
  const auto& cols = params.common.scaling.columns;
  double lo = cols.min[feature];
  double hi = cols.max[feature];
  // A feature constant in training (e.g. solar at night) gets a unit-wide grid.
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return linspace(lo, hi, points);
}

ShapeCurve extract_shape(const model::QnbmParams& params, std::size_t feature, double level, std::size_t hour,
                         std::span<const double> grid, std::size_t member, double expansion) {
  if (feature >= params.feature_count()) throw ParameterError("feature index " + std::to_string(feature) + " out of range");
  if (hour >= params.head.horizon) throw ParameterError("hour " + std::to_string(hour) + " out of range");
  const std::size_t g = find_level(params.head.levels, level);
  if (g == static_cast<std::size_t>(-1)) throw ParameterError("level " + fmt_double(level) + " is not modelled");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ParameterError("grid must be strictly increasing");

  ShapeCurve c;
  c.feature = params.common.feature_names[feature];
  c.feature_index = feature;
  c.level = params.head.levels[g];
  c.hour = hour;
  c.member = member;
  c.x.assign(grid.begin(), grid.end());
  c.normalized_units = in_revin_group(params, feature);

  const auto& scaling = params.common.scaling;
  std::vector<double> model_x(grid.size());
  double lo = -kNormalizedHalfWidth;
  double hi = kNormalizedHalfWidth;
  if (c.normalized_units) {
    const double a = scaling.revin.affine_scale(0, 0);
    const double b = scaling.revin.affine_shift(0, 0);
    for (std::size_t i = 0; i < grid.size(); ++i) model_x[i] = a * grid[i] + b;
  } else {
    for (std::size_t i = 0; i < grid.size(); ++i) model_x[i] = model::scale_column_value(scaling, feature, grid[i]);
    lo = scaling.columns.min[feature];
    hi = scaling.columns.max[feature];
  }
  const double pad = expansion * (hi - lo);
  const auto outside = std::count_if(grid.begin(), grid.end(), [&](double v) { return v < lo - pad || v > hi + pad; });
  if (outside > 0)
    c.warnings.push_back(std::to_string(outside) + " grid points outside the training range [" + fmt_double(lo) +
                         ", " + fmt_double(hi) + "]");

  c.shape = model::shape_values(params, feature, model_x);
  const double weight = model::head_weight(params, hour, g, feature) * model::output_unit_scale(scaling);
  c.contribution.resize(c.shape.size());
  for (std::size_t i = 0; i < c.shape.size(); ++i) c.contribution[i] = weight * c.shape[i];
  return c;
}

ShapeBundle extract_all(std::span<const model::ModelParams> members, std::span<const double> levels,
                        std::span<const std::size_t> hours, std::span<const std::size_t> features,
                        std::size_t points) {
  if (members.empty()) throw ParameterError("no checkpoints to interpret");
  const auto& first = as_qnbm(members[0], 0);
  ShapeBundle b;
  b.feature_names = first.common.feature_names;
  b.feature_names_hash = data::feature_names_hash(b.feature_names);
  for (std::size_t m = 1; m < members.size(); ++m) {
    const auto& p = as_qnbm(members[m], m);
    const auto hash = data::feature_names_hash(p.common.feature_names);
    if (hash != b.feature_names_hash) {
      throw IncompatibleError("member " + std::to_string(m) + " feature-names hash " + hex64(hash) +
                              " differs from member 0 (" + hex64(b.feature_names_hash) + ")");
    }
  }
  if (features.empty()) {
    for (std::size_t i = 0; i < b.feature_names.size(); ++i) b.features.push_back(i);
  } else {
    b.features.assign(features.begin(), features.end());
  }

  for (std::size_t f : b.features) {
    // Shared grid spanning the union of the members' training ranges.
    std::vector<double> grid = default_grid(first, f, points);
    for (std::size_t m = 1; m < members.size(); ++m) {
      const auto g = default_grid(std::get<model::QnbmParams>(members[m]), f, points);
      if (g.front() < grid.front() || g.back() > grid.back())
        grid = linspace(std::min(g.front(), grid.front()), std::max(g.back(), grid.back()), points);
    }
    b.grids.push_back(grid);
    for (double level : levels)
      for (std::size_t h : hours)
        for (std::size_t m = 0; m < members.size(); ++m)
          b.curves.push_back(extract_shape(std::get<model::QnbmParams>(members[m]), f, level, h, grid, m));
  }
  return b;
}

std::vector<std::filesystem::path> save_bundle(const ShapeBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  nlohmann::json manifest;
  manifest["feature_names_hash"] = hex64(bundle.feature_names_hash);
  manifest["columns"] = {"x", "contribution", "member", "feature", "gamma", "hour"};
  manifest["features"] = nlohmann::json::array();
  for (std::size_t k = 0; k < bundle.features.size(); ++k) {
    const std::size_t f = bundle.features[k];
    const std::string& name = bundle.feature_names[f];
    const auto path = dir / ("shape_" + file_safe(name) + ".csv");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "x,contribution,member,feature,gamma,hour\n";
    bool normalized = false;
    nlohmann::json warnings = nlohmann::json::array();
    std::size_t curves = 0;
    for (const auto& c : bundle.curves) {
      if (c.feature_index != f) continue;
      ++curves;
      normalized = c.normalized_units;
      for (const auto& w : c.warnings) warnings.push_back(w);
      for (std::size_t i = 0; i < c.x.size(); ++i)
        out << fmt_double(c.x[i]) << ',' << fmt_double(c.contribution[i]) << ',' << c.member << ',' << name << ','
            << fmt_double(c.level) << ',' << c.hour << '\n';
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
    paths.push_back(path);
    manifest["features"].push_back({{"feature", name},
                                    {"file", path.filename().string()},
                                    {"curves", curves},
                                    {"grid_min", bundle.grids[k].front()},
                                    {"grid_max", bundle.grids[k].back()},
                                    {"grid_points", bundle.grids[k].size()},
                                    {"units", normalized ? "instance-standardized" : "raw"},
                                    {"warnings", warnings}});
  }
  std::ofstream m(dir / "manifest.json");
  m << manifest.dump(2) << '\n';
  if (!m) throw IoError("failed writing shape manifest in '" + dir.string() + "'");
  return paths;
}

double central_slope(std::span<const double> x, std::span<const double> y, double fraction) {
  if (x.size() != y.size() || x.size() < 2) throw ParameterError("slope needs matching x and y with 2+ points");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double trim = (1.0 - fraction) / 2.0 * (*mx - *mn);
  const double lo = *mn + trim;
  const double hi = *mx - trim;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < lo || x[i] > hi) continue;
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    n += 1;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2 || den == 0.0) throw ParameterError("central range holds fewer than 2 distinct points");
  return (n * sxy - sx * sy) / den;
}

std::size_t count_breakpoints(std::span<const double> x, std::span<const double> y, double tolerance) {
  std::size_t count = 0;
  for (std::size_t i = 2; i < x.size(); ++i) {
    const double s0 = (y[i - 1] - y[i - 2]) / (x[i - 1] - x[i - 2]);
    const double s1 = (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
    if (std::abs(s1 - s0) > tolerance * std::max({1.0, std::abs(s0), std::abs(s1)})) ++count;
  }
  return count;
}

}  // namespace qnbm::interpret
