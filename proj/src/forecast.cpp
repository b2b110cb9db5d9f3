#include "qnbm/forecast.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <tuple>
#include <string>

#include "qnbm/error.hpp"
#include "qnbm/format.hpp"

namespace qnbm {

std::vector<double> percentile_levels() {
  std::vector<double> levels(99);
  for (int i = 0; i < 99; ++i) levels[static_cast<std::size_t>(i)] = (i + 1) / 100.0;
  return levels;
}

void validate_levels(std::span<const double> levels) {
  if (levels.empty()) throw ParameterError("quantile level set is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0))
      throw ParameterError("quantile level " + fmt_double(levels[i]) + " lies outside (0, 1)");
    if (i > 0 && !(levels[i] > levels[i - 1]))
      throw ParameterError("quantile levels must be strictly increasing");
  }
}

std::size_t find_level(std::span<const double> levels, double level) {
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (std::abs(levels[i] - level) <= 1e-9) return i;
  return static_cast<std::size_t>(-1);
}

void QuantileForecast::validate() const {
  if (values.rows() != days.size())
    throw ShapeError("forecast has " + std::to_string(values.rows()) + " rows for " +
                     std::to_string(days.size()) + " days");
  if (values.cols() != horizon * levels.size())
    throw ShapeError("forecast width " + std::to_string(values.cols()) + " differs from H x |levels| = " +
                     std::to_string(horizon * levels.size()));
}

void sort_quantile_blocks(num::Matrix& values, std::size_t horizon, std::size_t level_count) {
  if (values.cols() != horizon * level_count) throw ShapeError("sort_quantile_blocks: width mismatch");
  for (std::size_t r = 0; r < values.rows(); ++r) {
    auto row = values.row(r);
    for (std::size_t h = 0; h < horizon; ++h) {
      auto block = row.subspan(h * level_count, level_count);
      std::sort(block.begin(), block.end());
    }
  }
}

void sort_quantiles(QuantileForecast& forecast) {
  sort_quantile_blocks(forecast.values, forecast.horizon, forecast.levels.size());
}

std::size_t monotonicity_violations(const QuantileForecast& forecast) {
  std::size_t count = 0;
  const std::size_t g_count = forecast.levels.size();
  for (std::size_t d = 0; d < forecast.size(); ++d)
    for (std::size_t h = 0; h < forecast.horizon; ++h)
      for (std::size_t g = 1; g < g_count; ++g)
        if (forecast.at(d, h, g) < forecast.at(d, h, g - 1)) ++count;
  return count;
}

QuantileForecast concatenate(std::span<const QuantileForecast> parts) {
  QuantileForecast out;
  if (parts.empty()) return out;
  out.horizon = parts.front().horizon;
  out.levels = parts.front().levels;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.horizon != out.horizon || p.levels != out.levels)
      throw ShapeError("cannot concatenate forecasts with different horizon or levels");
    rows += p.size();
  }
  out.values = num::Matrix(rows, out.horizon * out.levels.size());
  std::size_t r = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i, ++r) {
      std::copy(p.values.row(i).begin(), p.values.row(i).end(), out.values.row(r).begin());
      out.days.push_back(p.days[i]);
    }
  }
  return out;
}

void write_forecast_csv(const QuantileForecast& forecast, std::ostream& out, ForecastCsvLayout layout) {
  forecast.validate();
  std::vector<std::string> level_text;
  for (double g : forecast.levels) level_text.push_back(fmt_double(g));
  if (layout == ForecastCsvLayout::Long) {
    out << "day,hour,gamma,value\n";
    for (std::size_t d = 0; d < forecast.size(); ++d) {
      const std::string day = data::format_date(forecast.days[d]);
      for (std::size_t h = 0; h < forecast.horizon; ++h)
        for (std::size_t g = 0; g < forecast.levels.size(); ++g)
          out << day << ',' << h << ',' << level_text[g] << ',' << fmt_double(forecast.at(d, h, g)) << '\n';
    }
  } else {
    out << "day,hour";
    for (const auto& t : level_text) out << ",q" << t;
    out << '\n';
    for (std::size_t d = 0; d < forecast.size(); ++d) {
      const std::string day = data::format_date(forecast.days[d]);
      for (std::size_t h = 0; h < forecast.horizon; ++h) {
        out << day << ',' << h;
        for (std::size_t g = 0; g < forecast.levels.size(); ++g) out << ',' << fmt_double(forecast.at(d, h, g));
        out << '\n';
      }
    }
  }
}

void save_forecast_csv(const QuantileForecast& forecast, const std::filesystem::path& path,
                       ForecastCsvLayout layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_forecast_csv(forecast, out, layout);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

QuantileForecast read_forecast_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("forecast CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "day,hour,gamma,value") throw SchemaError("forecast CSV header must be 'day,hour,gamma,value'");

  auto parse_number = [](std::string_view text, std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
      throw DataError("forecast CSV line " + std::to_string(line_no) + ": bad number '" + std::string(text) + "'");
    return v;
  };

  std::map<std::tuple<data::DayNumber, long, double>, double> cells;
  std::map<data::DayNumber, int> day_set;
  std::map<long, int> hour_set;
  std::map<double, int> level_set;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      f.push_back(rest.substr(0, pos));
    f.push_back(rest);
    if (f.size() != 4) throw DataError("forecast CSV line " + std::to_string(line_no) + " must have 4 fields");
    const data::DayNumber day = data::parse_date(f[0]);
    const auto hour = static_cast<long>(parse_number(f[1], line_no));
    const double gamma = parse_number(f[2], line_no);
    const double value = parse_number(f[3], line_no);
    if (!cells.emplace(std::make_tuple(day, hour, gamma), value).second)
      throw DataError("forecast CSV line " + std::to_string(line_no) + " repeats a (day, hour, gamma) cell");
    day_set[day];
    hour_set[hour];
    level_set[gamma];
  }
  QuantileForecast fc;
  for (const auto& [d, _] : day_set) fc.days.push_back(d);
  for (const auto& [g, _] : level_set) fc.levels.push_back(g);
  fc.horizon = hour_set.size();
  long expected_hour = 0;
  for (const auto& [h, _] : hour_set)
    if (h != expected_hour++) throw DataError("forecast CSV hours must be 0..H-1");
  if (cells.size() != fc.days.size() * fc.horizon * fc.levels.size())
    throw DataError("forecast CSV does not cover a complete day x hour x gamma grid");
  validate_levels(fc.levels);
  fc.values = num::Matrix(fc.days.size(), fc.horizon * fc.levels.size());
  std::size_t d = 0;
  for (auto it = cells.begin(); it != cells.end(); ++it) {
    const auto& [key, value] = *it;
    const auto& [day, hour, gamma] = key;
    while (fc.days[d] != day) ++d;
    fc.at(d, static_cast<std::size_t>(hour), find_level(fc.levels, gamma)) = value;
  }
  return fc;
}

QuantileForecast load_forecast_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_forecast_csv(in);
}

}  // namespace qnbm
