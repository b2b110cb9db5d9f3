#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qnbm/forecast.hpp"
#include "qnbm/matrix.hpp"

namespace qnbm::eval {

/// Mean pinball loss over every (day, hour, γ). Not multiplied by 2.
/// When `warnings` is given, a note is appended if the levels are not the
/// 99-percentile grid. ShapeError when `y` (days × H) does not match.
double crps_pinball(const num::Matrix& y, const QuantileForecast& q, std::vector<std::string>* warnings = nullptr);

/// Mean |y − q̂₀.₅|. ParameterError when 0.5 is not among the levels.
double mae(const num::Matrix& y, const QuantileForecast& q);

struct Interval {
  std::size_t lower = 0;  // level indices
  std::size_t upper = 0;
};

/// Central interval of nominal coverage `percent` (e.g. 90 → q₀.₀₅…q₀.₉₅).
/// ParameterError when either endpoint is not on the level grid.
Interval central_interval(std::span<const double> levels, double percent);

/// Percentage of (day, hour) cells with q_lo ≤ y ≤ q_hi.
double picp(const num::Matrix& y, const QuantileForecast& q, double percent);

struct KupiecResult {
  std::size_t violations = 0;
  std::size_t n = 0;
  double nominal = 0.0;  // expected violation probability p
  double lr = 0.0;
  double critical = 0.0;
  bool reject = false;
};

/// Likelihood-ratio unconditional-coverage test. ParameterError unless
/// x ≤ n, n > 0, 0 < p < 1 and 0 < alpha < 1.
KupiecResult kupiec_test(std::size_t violations, std::size_t n, double p, double alpha = 0.05);
/// χ²₁ critical value at significance alpha.
double chi2_1_critical(double alpha);

/// Kupiec test on the cells falling outside the central interval.
KupiecResult kupiec_interval(const num::Matrix& y, const QuantileForecast& q, double percent, double alpha = 0.05);
/// Number of delivery hours (out of H) whose own interval passes the test.
std::size_t kupiec_hours_passing(const num::Matrix& y, const QuantileForecast& q, double percent,
                                 double alpha = 0.05);

enum class DmDirection { Equal, FirstBetter, SecondBetter };

struct DmResult {
  double statistic = 0.0;
  double p_value = 1.0;
  DmDirection direction = DmDirection::Equal;
  double mean_difference = 0.0;
  std::size_t n = 0;
};

/// Diebold–Mariano test on per-period losses, d = a − b, sample standard
/// deviation, two-sided normal p-value. ParameterError for unequal lengths
/// or n < 30.
DmResult dm_test(std::span<const double> loss_a, std::span<const double> loss_b);

enum class LossNorm { L1, L2 };

/// Per-day norm of the H × |Γ| pinball-loss grid.
std::vector<double> daily_loss_norms(const num::Matrix& y, const QuantileForecast& q, LossNorm norm = LossNorm::L1);

/// Pairwise one-sided DM p-values for heat maps: entry (i, j) is small when
/// model j's losses are significantly lower than model i's. Diagonal is NaN.
num::Matrix dm_pvalue_matrix(const num::Matrix& y, std::span<const QuantileForecast> forecasts,
                             LossNorm norm = LossNorm::L1);
void write_dm_matrix_csv(const num::Matrix& pvalues, std::span<const std::string> names, std::ostream& out);

/// For every γ, the share of (day, hour) cells with y ≤ q̂_γ.
std::vector<double> calibration_curve(const num::Matrix& y, const QuantileForecast& q);

struct EvalReport {
  std::size_t days = 0;
  std::size_t horizon = 0;
  double mae = 0.0;
  double crps = 0.0;
  std::map<int, double> picp;  // nominal percent → coverage %
  std::map<int, KupiecResult> kupiec;
  std::map<int, std::size_t> kupiec_hours;
  std::vector<double> levels;
  std::vector<double> calibration;
  std::vector<std::string> warnings;
};

/// Full report for the 50/90/98 % intervals (those representable on Γ).
EvalReport evaluate(const num::Matrix& y, const QuantileForecast& q, std::span<const int> intervals = {});

std::string report_json(const EvalReport& report);
/// Flat "metric,value" rows.
void write_report_csv(const EvalReport& report, std::ostream& out);

/// Reference test-set figures for German and Belgian market data, kept as fixtures; never produced by this code.
struct ReferenceResult {
  const char* market;
  const char* model;
  double picp50, picp90, picp98;
  int kupiec_hours50, kupiec_hours90, kupiec_hours98;
  double mae, crps;
};

std::span<const ReferenceResult> reference_results();

}  // namespace qnbm::eval
