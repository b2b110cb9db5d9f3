#include "qnbm/model_support.hpp"

#include <algorithm>
#include <cmath>

#include "qnbm/error.hpp"

namespace qnbm::model {

double sorted_quantile(std::span<const double> ascending, double level) {
  if (ascending.empty()) throw ParameterError("quantile of an empty sample");
  const double pos = level * static_cast<double>(ascending.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, ascending.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return ascending[lo] + w * (ascending[hi] - ascending[lo]);
}

num::Matrix unconditional_quantiles(const InputScaling& scaling, const data::WindowedDataset& train,
                                    std::span<const double> levels) {
  const auto stats = revin_statistics(scaling.revin, train.inputs);
  const num::Matrix scaled = scale_targets(scaling, train.targets, stats);
  num::Matrix out(scaled.cols(), levels.size());
  std::vector<double> column(scaled.rows());
  for (std::size_t h = 0; h < scaled.cols(); ++h) {
    for (std::size_t r = 0; r < scaled.rows(); ++r) column[r] = scaled(r, h);
    std::sort(column.begin(), column.end());
    for (std::size_t g = 0; g < levels.size(); ++g) out(h, g) = sorted_quantile(column, levels[g]);
  }
  return out;
}

num::Matrix dropout_mask(num::Rng& rng, std::size_t rows, std::size_t cols, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  num::Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.values()) m = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

}  // namespace qnbm::model
