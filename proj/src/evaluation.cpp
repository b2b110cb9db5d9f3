#include "qnbm/evaluation.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <ostream>

#include <boost/math/distributions/normal.hpp>

#include "json.hpp"
#include "qnbm/error.hpp"
#include "qnbm/format.hpp"

namespace qnbm::eval {

namespace {

void check(const num::Matrix& y, const QuantileForecast& q) {
  q.validate();
  if (y.rows() != q.size() || y.cols() != q.horizon) {
    throw ShapeError("targets " + y.shape_string() + " do not match a forecast of " + std::to_string(q.size()) +
                     " days × " + std::to_string(q.horizon) + " hours");
  }
}

double pinball(double y, double q, double level) { return y > q ? (y - q) * level : (q - y) * (1.0 - level); }

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

bool is_percentile_grid(std::span<const double> levels) {
  if (levels.size() != 99) return false;
  for (std::size_t i = 0; i < 99; ++i)
    if (std::abs(levels[i] - static_cast<double>(i + 1) / 100.0) > 1e-9) return false;
  return true;
}

}  // namespace

double crps_pinball(const num::Matrix& y, const QuantileForecast& q, std::vector<std::string>* warnings) {
  check(y, q);
  if (warnings && !is_percentile_grid(q.levels))
    warnings->push_back("CRPS approximated on " + std::to_string(q.level_count()) +
                        " levels instead of the 99-percentile grid");
  double total = 0.0;
  for (std::size_t d = 0; d < q.size(); ++d)
    for (std::size_t h = 0; h < q.horizon; ++h)
      for (std::size_t g = 0; g < q.level_count(); ++g) total += pinball(y(d, h), q.at(d, h, g), q.levels[g]);
  const auto cells = q.size() * q.horizon * q.level_count();
  return cells == 0 ? 0.0 : total / static_cast<double>(cells);
}

double mae(const num::Matrix& y, const QuantileForecast& q) {
  check(y, q);
  const std::size_t med = find_level(q.levels, 0.5);
  if (med == static_cast<std::size_t>(-1)) throw ParameterError("MAE needs the 0.5 quantile among the levels");
  double total = 0.0;
  for (std::size_t d = 0; d < q.size(); ++d)
    for (std::size_t h = 0; h < q.horizon; ++h) total += std::abs(y(d, h) - q.at(d, h, med));
  return y.size() == 0 ? 0.0 : total / static_cast<double>(y.size());
}

Interval central_interval(std::span<const double> levels, double percent) {
  if (!(percent > 0.0 && percent < 100.0)) throw ParameterError("interval coverage must lie in (0, 100)");
  const double tail = (1.0 - percent / 100.0) / 2.0;
  const std::size_t lo = find_level(levels, tail);
  const std::size_t hi = find_level(levels, 1.0 - tail);
  if (lo == static_cast<std::size_t>(-1) || hi == static_cast<std::size_t>(-1)) {
    throw ParameterError("a " + fmt_double(percent) + "% central interval needs levels " + fmt_double(tail) + " and " +
                         fmt_double(1.0 - tail));
  }
  return {lo, hi};
}

double picp(const num::Matrix& y, const QuantileForecast& q, double percent) {
  check(y, q);
  const Interval iv = central_interval(q.levels, percent);
  std::size_t inside = 0;
  for (std::size_t d = 0; d < q.size(); ++d)
    for (std::size_t h = 0; h < q.horizon; ++h)
      inside += q.at(d, h, iv.lower) <= y(d, h) && y(d, h) <= q.at(d, h, iv.upper);
  return y.size() == 0 ? 0.0 : 100.0 * static_cast<double>(inside) / static_cast<double>(y.size());
}

double chi2_1_critical(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("significance level must lie in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
  return z * z;
}

KupiecResult kupiec_test(std::size_t violations, std::size_t n, double p, double alpha) {
  if (n == 0) throw ParameterError("Kupiec test needs at least one observation");
  if (violations > n)
    throw ParameterError("Kupiec test: " + std::to_string(violations) + " violations exceed n=" + std::to_string(n));
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("Kupiec test: nominal probability must lie in (0, 1)");
  const auto x = static_cast<double>(violations);
  const auto nn = static_cast<double>(n);
  const double phat = x / nn;
  const double null_ll = xlogy(nn - x, 1.0 - p) + xlogy(x, p);
  const double alt_ll = xlogy(nn - x, 1.0 - phat) + xlogy(x, phat);
  KupiecResult r;
  r.violations = violations;
  r.n = n;
  r.nominal = p;
  r.lr = std::max(0.0, -2.0 * null_ll + 2.0 * alt_ll);
  r.critical = chi2_1_critical(alpha);
  r.reject = r.lr > r.critical;
  return r;
}

namespace {

KupiecResult kupiec_cells(const num::Matrix& y, const QuantileForecast& q, double percent, double alpha,
                          std::size_t h_first, std::size_t h_last) {
  const Interval iv = central_interval(q.levels, percent);
  std::size_t violations = 0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < q.size(); ++d) {
    for (std::size_t h = h_first; h < h_last; ++h, ++n) {
      const double v = y(d, h);
      violations += v < q.at(d, h, iv.lower) || v > q.at(d, h, iv.upper);
    }
  }
  return kupiec_test(violations, n, 1.0 - percent / 100.0, alpha);
}

}  // namespace

KupiecResult kupiec_interval(const num::Matrix& y, const QuantileForecast& q, double percent, double alpha) {
  check(y, q);
  return kupiec_cells(y, q, percent, alpha, 0, q.horizon);
}

std::size_t kupiec_hours_passing(const num::Matrix& y, const QuantileForecast& q, double percent, double alpha) {
  check(y, q);
  std::size_t passing = 0;
  for (std::size_t h = 0; h < q.horizon; ++h) passing += !kupiec_cells(y, q, percent, alpha, h, h + 1).reject;
  return passing;
}

DmResult dm_test(std::span<const double> loss_a, std::span<const double> loss_b) {
  if (loss_a.size() != loss_b.size())
    throw ParameterError("DM test: loss series have lengths " + std::to_string(loss_a.size()) + " and " +
                         std::to_string(loss_b.size()));
  const std::size_t n = loss_a.size();
  if (n < 30) throw ParameterError("DM test needs at least 30 periods, got " + std::to_string(n));
  double mean = 0.0;
  for (std::size_t t = 0; t < n; ++t) mean += loss_a[t] - loss_b[t];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double e = loss_a[t] - loss_b[t] - mean;
    ss += e * e;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  DmResult r;
  r.n = n;
  r.mean_difference = mean;
  r.direction = mean < 0.0 ? DmDirection::FirstBetter : mean > 0.0 ? DmDirection::SecondBetter : DmDirection::Equal;
  if (sd == 0.0) {
    if (mean == 0.0) return r;
    r.statistic = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    return r;
  }
  r.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = std::erfc(std::abs(r.statistic) / std::sqrt(2.0));
  return r;
}

std::vector<double> daily_loss_norms(const num::Matrix& y, const QuantileForecast& q, LossNorm norm) {
  check(y, q);
  std::vector<double> out(q.size(), 0.0);
  for (std::size_t d = 0; d < q.size(); ++d) {
    double acc = 0.0;
    for (std::size_t h = 0; h < q.horizon; ++h) {
      for (std::size_t g = 0; g < q.level_count(); ++g) {
        const double l = pinball(y(d, h), q.at(d, h, g), q.levels[g]);
        acc += norm == LossNorm::L1 ? l : l * l;
      }
    }
    out[d] = norm == LossNorm::L1 ? acc : std::sqrt(acc);
  }
  return out;
}

num::Matrix dm_pvalue_matrix(const num::Matrix& y, std::span<const QuantileForecast> forecasts, LossNorm norm) {
  std::vector<std::vector<double>> losses;
  for (const auto& f : forecasts) losses.push_back(daily_loss_norms(y, f, norm));
  const std::size_t m = forecasts.size();
  num::Matrix p(m, m, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const DmResult r = dm_test(losses[i], losses[j]);
      p(i, j) = std::isinf(r.statistic) ? (r.statistic > 0 ? 0.0 : 1.0) : 1.0 - normal_cdf(r.statistic);
    }
  }
  return p;
}

void write_dm_matrix_csv(const num::Matrix& pvalues, std::span<const std::string> names, std::ostream& out) {
  if (names.size() != pvalues.rows() || pvalues.rows() != pvalues.cols())
    throw ShapeError("DM matrix " + pvalues.shape_string() + " does not match " + std::to_string(names.size()) +
                     " model names");
  out << "model";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i];
    for (std::size_t j = 0; j < names.size(); ++j) {
      out << ',';
      if (!std::isnan(pvalues(i, j))) out << fmt_double(pvalues(i, j));
    }
    out << '\n';
  }
}

std::vector<double> calibration_curve(const num::Matrix& y, const QuantileForecast& q) {
  check(y, q);
  std::vector<double> out(q.level_count(), 0.0);
  if (y.size() == 0) return out;
  for (std::size_t g = 0; g < q.level_count(); ++g) {
    std::size_t below = 0;
    for (std::size_t d = 0; d < q.size(); ++d)
      for (std::size_t h = 0; h < q.horizon; ++h) below += y(d, h) <= q.at(d, h, g);
    out[g] = static_cast<double>(below) / static_cast<double>(y.size());
  }
  return out;
}

EvalReport evaluate(const num::Matrix& y, const QuantileForecast& q, std::span<const int> intervals) {
  static constexpr std::array<int, 3> kDefault{50, 90, 98};
  if (intervals.empty()) intervals = kDefault;
  EvalReport r;
  r.days = q.size();
  r.horizon = q.horizon;
  r.crps = crps_pinball(y, q, &r.warnings);
  if (find_level(q.levels, 0.5) != static_cast<std::size_t>(-1)) r.mae = mae(y, q);
  else {
    r.mae = std::numeric_limits<double>::quiet_NaN();
    r.warnings.push_back("MAE skipped: no 0.5 level");
  }
  for (int pct : intervals) {
    try {
      central_interval(q.levels, pct);
    } catch (const ParameterError& e) {
      r.warnings.push_back(std::string("interval skipped: ") + e.what());
      continue;
    }
    r.picp[pct] = picp(y, q, pct);
    r.kupiec[pct] = kupiec_interval(y, q, pct);
    r.kupiec_hours[pct] = kupiec_hours_passing(y, q, pct);
  }
  r.levels = q.levels;
  r.calibration = calibration_curve(y, q);
  return r;
}

std::string report_json(const EvalReport& r) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["days"] = r.days;
  j["horizon"] = r.horizon;
  j["mae"] = num(r.mae);
  j["crps"] = num(r.crps);
  j["picp"] = json::object();
  j["kupiec"] = json::object();
  for (const auto& [pct, v] : r.picp) j["picp"][std::to_string(pct)] = v;
  for (const auto& [pct, k] : r.kupiec) {
    j["kupiec"][std::to_string(pct)] = {{"violations", k.violations}, {"n", k.n},
                                        {"nominal", k.nominal},       {"lr", k.lr},
                                        {"critical", k.critical},     {"reject", k.reject},
                                        {"hours_passing", r.kupiec_hours.at(pct)}};
  }
  j["calibration"] = json::array();
  for (std::size_t g = 0; g < r.levels.size(); ++g)
    j["calibration"].push_back({{"level", r.levels[g]}, {"frequency", r.calibration[g]}});
  j["warnings"] = r.warnings;
  return j.dump(2);
}

void write_report_csv(const EvalReport& r, std::ostream& out) {
  out << "metric,value\n";
  out << "days," << r.days << '\n';
  out << "mae," << fmt_double(r.mae) << '\n';
  out << "crps," << fmt_double(r.crps) << '\n';
  for (const auto& [pct, v] : r.picp) out << "picp" << pct << ',' << fmt_double(v) << '\n';
  for (const auto& [pct, k] : r.kupiec) {
    out << "kupiec" << pct << "_violations," << k.violations << '\n';
    out << "kupiec" << pct << "_lr," << fmt_double(k.lr) << '\n';
    out << "kupiec" << pct << "_reject," << (k.reject ? 1 : 0) << '\n';
    out << "kupiec" << pct << "_hours_passing," << r.kupiec_hours.at(pct) << '\n';
  }
  for (std::size_t g = 0; g < r.levels.size(); ++g)
    out << "calibration_" << fmt_double(r.levels[g]) << ',' << fmt_double(r.calibration[g]) << '\n';
}

std::span<const ReferenceResult> reference_results() {
  // Bracketed counts are the delivery hours passing the Kupiec test.
  static constexpr std::array<ReferenceResult, 8> kTable{{
      {"DE", "J-DNN", 54.3, 91.4, 97.8, 13, 17, 23, 10.499, 3.809},
      {"DE", "QR-DNN", 40.6, 83.1, 95.7, 1, 2, 13, 10.629, 3.858},
      {"DE", "NBMLSS", 53.8, 91.3, 97.9, 18, 24, 23, 10.230, 3.728},
      {"DE", "QNBM", 52.2, 91.1, 98.1, 18, 23, 24, 10.411, 3.789},
      {"BE", "J-DNN", 48.5, 89.0, 97.0, 20, 21, 19, 13.431, 4.847},
      {"BE", "QR-DNN", 40.7, 84.4, 96.4, 0, 4, 15, 13.432, 4.863},
      {"BE", "NBMLSS", 48.7, 87.9, 97.1, 21, 19, 20, 12.758, 4.644},
      {"BE", "QNBM", 47.3, 88.9, 97.9, 18, 19, 23, 12.826, 4.653},
  }};
  return kTable;
}

}  // namespace qnbm::eval
