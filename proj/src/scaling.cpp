#include "qnbm/scaling.hpp"

#include <algorithm>
#include <cmath>

#include "qnbm/error.hpp"

namespace qnbm::model {

namespace {

bool in_group(const RevinLayer& layer, std::size_t col) {
  return layer.enabled && col >= layer.first_column && col < layer.first_column + layer.column_count;
}

}  // namespace

Standardizer fit_standardizer(const num::Matrix& inputs) {
  const std::size_t n = inputs.rows();
  const std::size_t cols = inputs.cols();
  if (n == 0) throw DataError("cannot fit scaling on an empty training set");
  Standardizer s;
  s.mean.assign(cols, 0.0);
  s.scale.assign(cols, 1.0);
  s.min.assign(cols, inputs(0, 0));
  s.max.assign(cols, inputs(0, 0));
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    double lo = inputs(0, c);
    double hi = lo;
    for (std::size_t r = 0; r < n; ++r) {
      mean += inputs(r, c);
      lo = std::min(lo, inputs(r, c));
      hi = std::max(hi, inputs(r, c));
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (inputs(r, c) - mean) * (inputs(r, c) - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    s.mean[c] = mean;
    s.scale[c] = sd > 1e-12 ? sd : 1.0;
    s.min[c] = lo;
    s.max[c] = hi;
  }
  return s;
}

RevinStats revin_statistics(const RevinLayer& layer, const num::Matrix& inputs) {
  RevinStats stats;
  if (!layer.enabled) return stats;
  if (layer.column_count == 0) throw ParameterError("RevIN enabled on an empty feature group");
  stats.mean.resize(inputs.rows());
  stats.stdev.resize(inputs.rows());
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const auto group = inputs.row(r).subspan(layer.first_column, layer.column_count);
    double mean = 0.0;
    for (double v : group) mean += v;
    mean /= static_cast<double>(group.size());
    double var = 0.0;
    for (double v : group) var += (v - mean) * (v - mean);
    var /= static_cast<double>(group.size());
    stats.mean[r] = mean;
    stats.stdev[r] = std::sqrt(var + layer.epsilon);
  }
  return stats;
}

std::vector<double> revin_normalize(const RevinLayer& layer, std::span<const double> values, double mean,
                                    double stdev) {
  const double a = layer.affine_scale(0, 0);
  const double b = layer.affine_shift(0, 0);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = a * ((values[i] - mean) / stdev) + b;
  return out;
}

std::vector<double> revin_denormalize(const RevinLayer& layer, std::span<const double> values, double mean,
                                      double stdev) {
  const double a = layer.affine_scale(0, 0);
  const double b = layer.affine_shift(0, 0);
  if (a == 0.0) throw NumericError("RevIN affine scale is zero; the transform is not invertible");
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = mean + stdev * ((values[i] - b) / a);
  return out;
}

std::vector<double> revin_roundtrip(const RevinLayer& layer, std::span<const double> values) {
  RevinLayer active = layer;
  active.enabled = true;
  active.first_column = 0;
  active.column_count = values.size();
  const num::Matrix row(1, values.size(), std::vector<double>(values.begin(), values.end()));
  const auto stats = revin_statistics(active, row);
  const auto normalized = revin_normalize(active, values, stats.mean[0], stats.stdev[0]);
  return revin_denormalize(active, normalized, stats.mean[0], stats.stdev[0]);
}

InputScaling fit_scaling(const data::WindowedDataset& train, bool revin, double revin_epsilon) {
  InputScaling scaling;
  scaling.columns = fit_standardizer(train.inputs);
  scaling.revin.enabled = revin;
  scaling.revin.first_column = 0;
  scaling.revin.column_count = train.price_lag_columns;
  scaling.revin.epsilon = revin_epsilon;
  if (revin && train.price_lag_columns == 0)
    throw ConfigError("RevIN needs price-lag features; the window configuration has none");
  if (!revin) {
    double mean = 0.0;
    for (double v : train.targets.values()) mean += v;
    mean /= static_cast<double>(train.targets.size());
    double var = 0.0;
    for (double v : train.targets.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(train.targets.size());
    scaling.target.mean = mean;
    scaling.target.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return scaling;
}

ScaledInputs scale_inputs(const InputScaling& scaling, const num::Matrix& raw,
                          std::span<const std::string> feature_names) {
  const std::size_t cols = scaling.columns.size();
  if (raw.cols() != cols)
    throw ShapeError("model expects " + std::to_string(cols) + " input features, got " + std::to_string(raw.cols()));
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    auto row = raw.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      if (!std::isfinite(row[c])) {
        const std::string name = c < feature_names.size() ? feature_names[c] : "#" + std::to_string(c);
        throw DataError("input row " + std::to_string(r) + " has a non-finite value in feature '" + name + "'");
      }
    }
  }
  ScaledInputs out;
  out.x = num::Matrix(raw.rows(), cols);
  const auto& layer = scaling.revin;
  out.stats = revin_statistics(layer, raw);
  if (layer.enabled) out.lag_centred = num::Matrix(raw.rows(), layer.column_count);
  const double a = layer.affine_scale(0, 0);
  const double b = layer.affine_shift(0, 0);
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    auto src = raw.row(r);
    auto dst = out.x.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      if (in_group(layer, c)) {
        const double centred = (src[c] - out.stats.mean[r]) / out.stats.stdev[r];
        out.lag_centred(r, c - layer.first_column) = centred;
        dst[c] = a * centred + b;
      } else {
        dst[c] = (src[c] - scaling.columns.mean[c]) / scaling.columns.scale[c];
      }
    }
  }
  return out;
}

num::Matrix unscale_outputs(const InputScaling& scaling, const num::Matrix& model_out, const RevinStats& stats) {
  num::Matrix q(model_out.rows(), model_out.cols());
  if (scaling.revin.enabled) {
    const double a = scaling.revin.affine_scale(0, 0);
    const double b = scaling.revin.affine_shift(0, 0);
    for (std::size_t r = 0; r < q.rows(); ++r) {
      const double mu = stats.mean[r];
      const double s = stats.stdev[r];
      for (std::size_t c = 0; c < q.cols(); ++c) q(r, c) = mu + s * ((model_out(r, c) - b) / a);
    }
  } else {
    for (std::size_t r = 0; r < q.rows(); ++r)
      for (std::size_t c = 0; c < q.cols(); ++c)
        q(r, c) = scaling.target.mean + scaling.target.scale * model_out(r, c);
  }
  return q;
}

num::Matrix scale_targets(const InputScaling& scaling, const num::Matrix& targets, const RevinStats& stats) {
  num::Matrix out(targets.rows(), targets.cols());
  if (scaling.revin.enabled) {
    const double a = scaling.revin.affine_scale(0, 0);
    const double b = scaling.revin.affine_shift(0, 0);
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c)
        out(r, c) = a * ((targets(r, c) - stats.mean[r]) / stats.stdev[r]) + b;
  } else {
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c)
        out(r, c) = (targets(r, c) - scaling.target.mean) / scaling.target.scale;
  }
  return out;
}

num::Matrix output_gradient_to_model(const InputScaling& scaling, const RevinStats& stats,
                                     const num::Matrix& grad_outputs) {
  num::Matrix g(grad_outputs.rows(), grad_outputs.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double factor = scaling.revin.enabled ? stats.stdev[r] / scaling.revin.affine_scale(0, 0)
                                                : scaling.target.scale;
    for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) = grad_outputs(r, c) * factor;
  }
  return g;
}

AffineGradients revin_affine_gradients(const InputScaling& scaling, const ScaledInputs& inputs,
                                       const num::Matrix& model_out, const num::Matrix& grad_outputs,
                                       const num::Matrix& grad_model_inputs) {
  AffineGradients grads;
  const auto& layer = scaling.revin;
  if (!layer.enabled) return grads;
  const double a = layer.affine_scale(0, 0);
  const double b = layer.affine_shift(0, 0);
  double da = 0.0;
  double db = 0.0;
  for (std::size_t r = 0; r < model_out.rows(); ++r) {
    const double s = inputs.stats.stdev[r];
    for (std::size_t c = 0; c < model_out.cols(); ++c) {
      const double gq = grad_outputs(r, c);
      da -= gq * s * (model_out(r, c) - b) / (a * a);
      db -= gq * s / a;
    }
    for (std::size_t c = 0; c < layer.column_count; ++c) {
      const double gx = grad_model_inputs(r, layer.first_column + c);
      da += gx * inputs.lag_centred(r, c);
      db += gx;
    }
  }
  grads.scale(0, 0) = da;
  grads.shift(0, 0) = db;
  return grads;
}

double output_unit_scale(const InputScaling& scaling) {
  return scaling.revin.enabled ? 1.0 / scaling.revin.affine_scale(0, 0) : scaling.target.scale;
}

double scale_column_value(const InputScaling& scaling, std::size_t col, double raw) {
  if (in_group(scaling.revin, col))
    throw ParameterError("column " + std::to_string(col) + " is instance-normalized; no fixed raw-to-model map exists");
  return (raw - scaling.columns.mean[col]) / scaling.columns.scale[col];
}

}  // namespace qnbm::model
