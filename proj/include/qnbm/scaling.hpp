#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qnbm/dataset.hpp"
#include "qnbm/matrix.hpp"

namespace qnbm::model {

/// Per-column z-scoring fitted on training rows. min/max record the
/// observed training range of every column in raw units.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const noexcept { return mean.size(); }
};

Standardizer fit_standardizer(const num::Matrix& inputs);

/// Reversible instance normalization over the price-lag feature group.
///
/// Each row's lag values are centred and scaled by their own mean and
/// sqrt(var + epsilon), then passed through a learnable affine map. Model
/// outputs are mapped back through the inverse of the same transform, so
/// they come out in price units.
struct RevinLayer {
  bool enabled = false;
  std::size_t first_column = 0;
  std::size_t column_count = 0;
  /// One entry per normalized feature group (here: the price channel).
  num::Matrix affine_scale{1, 1, 1.0};
  num::Matrix affine_shift{1, 1, 0.0};
  double epsilon = 1e-5;
};

struct RevinStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

RevinStats revin_statistics(const RevinLayer& layer, const num::Matrix& inputs);
/// Normalizes one row of group values given its statistics.
std::vector<double> revin_normalize(const RevinLayer& layer, std::span<const double> values,
                                    double mean, double stdev);
std::vector<double> revin_denormalize(const RevinLayer& layer, std::span<const double> values,
                                      double mean, double stdev);
/// denormalize(normalize(x)) using x's own statistics.
std::vector<double> revin_roundtrip(const RevinLayer& layer, std::span<const double> values);

/// Global affine map of the outputs, used when RevIN is disabled.
struct TargetScaler {
  double mean = 0.0;
  double scale = 1.0;
};

/// Everything between raw dataset units and model space.
struct InputScaling {
  Standardizer columns;
  RevinLayer revin;
  TargetScaler target;
};

InputScaling fit_scaling(const data::WindowedDataset& train, bool revin, double revin_epsilon);

struct ScaledInputs {
  num::Matrix x;           // model-space inputs
  RevinStats stats;        // empty when RevIN is disabled
  num::Matrix lag_centred; // (x − μ)/s of the RevIN group, before the affine map
};

/// Raw inputs → model space. Throws DataError naming the feature when an
/// input is not finite.
ScaledInputs scale_inputs(const InputScaling& scaling, const num::Matrix& raw,
                          std::span<const std::string> feature_names);

/// Model-space outputs → price units.
num::Matrix unscale_outputs(const InputScaling& scaling, const num::Matrix& model_out,
                            const RevinStats& stats);
/// Price units → model space (inverse of unscale_outputs), one row per stats row.
num::Matrix scale_targets(const InputScaling& scaling, const num::Matrix& targets, const RevinStats& stats);

/// d(outputs)/d(model_out) applied row-wise to an upstream gradient.
num::Matrix output_gradient_to_model(const InputScaling& scaling, const RevinStats& stats,
                                     const num::Matrix& grad_outputs);

/// Gradients of the RevIN affine parameters, accumulated from both the input
/// and the output side.
struct AffineGradients {
  num::Matrix scale{1, 1, 0.0};
  num::Matrix shift{1, 1, 0.0};
};

AffineGradients revin_affine_gradients(const InputScaling& scaling, const ScaledInputs& inputs,
                                       const num::Matrix& model_out, const num::Matrix& grad_outputs,
                                       const num::Matrix& grad_model_inputs);

/// Output-side multiplier that converts a model-space contribution into
/// price units when it does not depend on the instance (RevIN disabled).
double output_unit_scale(const InputScaling& scaling);

/// Maps a raw value of column `col` into model space. Only valid for columns
/// outside the RevIN group.
double scale_column_value(const InputScaling& scaling, std::size_t col, double raw);

}  // namespace qnbm::model
