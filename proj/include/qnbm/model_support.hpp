#pragma once

#include <span>
#include <vector>

#include "qnbm/dataset.hpp"
#include "qnbm/matrix.hpp"
#include "qnbm/rng.hpp"
#include "qnbm/scaling.hpp"

namespace qnbm::model {

/// Linear-interpolation (type 7) sample quantile of an ascending sample.
double sorted_quantile(std::span<const double> ascending, double level);

/// H × |Γ| matrix of unconditional quantiles of the model-space targets.
num::Matrix unconditional_quantiles(const InputScaling& scaling, const data::WindowedDataset& train,
                                    std::span<const double> levels);

/// Inverted-dropout multipliers: 0 with probability `rate`, 1/(1−rate) otherwise.
num::Matrix dropout_mask(num::Rng& rng, std::size_t rows, std::size_t cols, double rate);

}  // namespace qnbm::model
