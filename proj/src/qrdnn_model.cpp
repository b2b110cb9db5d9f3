#include "qnbm/qrdnn_model.hpp"

#include <algorithm>
#include <cmath>

#include "qnbm/error.hpp"
#include "qnbm/forecast.hpp"
#include "qnbm/model_support.hpp"

namespace qnbm::model {

namespace {

num::Matrix affine(const num::Matrix& x, const DenseLayer& layer) {
  num::Matrix out = num::matmul_nt(x, layer.weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias(c, 0);
  }
  return out;
}

num::Matrix activate(const num::Matrix& pre, const num::Matrix& mask) {
  num::Matrix act = num::relu(pre);
  return mask.empty() ? act : num::hadamard(act, mask);
}

// Gradient through act = relu(pre) ⊙ mask.
num::Matrix through_activation(const num::Matrix& grad_act, const num::Matrix& pre, const num::Matrix& mask) {
  num::Matrix out(grad_act.rows(), grad_act.cols());
  auto g = grad_act.values();
  auto p = pre.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double m = mask.empty() ? 1.0 : mask.values()[i];
    o[i] = p[i] > 0.0 ? g[i] * m : 0.0;
  }
  return out;
}

void layer_gradients(DenseLayer& grad, const num::Matrix& grad_pre, const num::Matrix& input) {
  grad.weight = num::matmul_tn(grad_pre, input);
  const num::Matrix sums = num::column_sums(grad_pre);
  grad.bias = num::Matrix(sums.cols(), 1, std::vector<double>(sums.values().begin(), sums.values().end()));
}

}  // namespace

std::vector<NamedTensor> trainable_tensors(QrdnnParams& params) {
  std::vector<NamedTensor> out{{"hidden1.weight", &params.hidden1.weight}, {"hidden1.bias", &params.hidden1.bias},
                               {"hidden2.weight", &params.hidden2.weight}, {"hidden2.bias", &params.hidden2.bias},
                               {"output.weight", &params.output.weight},   {"output.bias", &params.output.bias}};
  if (params.common.scaling.revin.enabled) {
    out.push_back({"revin.scale", &params.common.scaling.revin.affine_scale});
    out.push_back({"revin.shift", &params.common.scaling.revin.affine_shift});
  }
  return out;
}

std::vector<ConstNamedTensor> trainable_tensors(const QrdnnParams& params) {
  std::vector<ConstNamedTensor> out;
  for (const auto& t : trainable_tensors(const_cast<QrdnnParams&>(params))) out.push_back({t.name, t.tensor});
  return out;
}

QrdnnParams init_qrdnn(const ModelConfig& config, const data::WindowedDataset& train, double dropout_rate,
                       num::Rng& rng) {
  config.validate();
  if (config.kind != ModelKind::Qrdnn) throw ConfigError("init_qrdnn called with a non-QR-DNN configuration");
  if (train.size() == 0) throw DataError("cannot initialize a model from an empty training set");
  if (train.horizon() != config.horizon)
    throw ShapeError("dataset horizon " + std::to_string(train.horizon()) + " differs from model horizon " +
                     std::to_string(config.horizon));
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");

  QrdnnParams p;
  p.common.config = config;
  p.common.feature_names = train.feature_names;
  p.common.price_lag_columns = train.price_lag_columns;
  p.common.scaling = fit_scaling(train, config.revin, config.revin_epsilon);
  p.dropout_rate = dropout_rate;

  const std::size_t nu = config.hidden_units;
  const std::size_t nf = train.feature_count();
  const std::size_t width = config.horizon * config.levels.size();
  p.hidden1 = {num::sample_normal(rng, nu, nf, 0.0, std::sqrt(2.0 / static_cast<double>(nf))), num::Matrix(nu, 1)};
  p.hidden2 = {num::sample_normal(rng, nu, nu, 0.0, std::sqrt(2.0 / static_cast<double>(nu))), num::Matrix(nu, 1)};
  p.output.weight = num::sample_normal(rng, width, nu, 0.0, 0.1 / std::sqrt(static_cast<double>(nu)));
  const num::Matrix beta = unconditional_quantiles(p.common.scaling, train, config.levels);
  p.output.bias = num::Matrix(width, 1, std::vector<double>(beta.values().begin(), beta.values().end()));
  return p;
}

QrdnnForward forward(const QrdnnParams& params, const num::Matrix& inputs, Mode mode, num::Rng* rng) {
  const auto& common = params.common;
  if (inputs.cols() != common.feature_count())
    throw ShapeError("QR-DNN expects " + std::to_string(common.feature_count()) + " input columns, got " +
                     std::to_string(inputs.cols()));
  QrdnnForward out;
  QrdnnCache& cache = out.cache;
  cache.revision = common.revision;
  cache.mode = mode;
  cache.inputs = scale_inputs(common.scaling, inputs, common.feature_names);
  const bool drop = mode == Mode::Train && params.dropout_rate > 0.0;
  if (drop && rng == nullptr) throw ContractError("train-mode forward with dropout needs a random generator");

  cache.pre1 = affine(cache.inputs.x, params.hidden1);
  if (drop) cache.mask1 = dropout_mask(*rng, cache.pre1.rows(), cache.pre1.cols(), params.dropout_rate);
  cache.act1 = activate(cache.pre1, cache.mask1);
  cache.pre2 = affine(cache.act1, params.hidden2);
  if (drop) cache.mask2 = dropout_mask(*rng, cache.pre2.rows(), cache.pre2.cols(), params.dropout_rate);
  cache.act2 = activate(cache.pre2, cache.mask2);
  cache.model_out = affine(cache.act2, params.output);
  out.quantiles = unscale_outputs(common.scaling, cache.model_out, cache.inputs.stats);
  return out;
}

QrdnnParams backward(const QrdnnParams& params, const QrdnnCache& cache, const num::Matrix& grad_outputs) {
  if (cache.revision != params.common.revision) {
    throw ContractError("stale forward cache: produced at parameter revision " + std::to_string(cache.revision) +
                        ", parameters are at revision " + std::to_string(params.common.revision));
  }
  num::require_same_shape(grad_outputs, cache.model_out, "QR-DNN backward");
  QrdnnParams grads = params;
  for (auto& t : trainable_tensors(grads)) t.tensor->fill(0.0);

  const num::Matrix dout = output_gradient_to_model(params.common.scaling, cache.inputs.stats, grad_outputs);
  layer_gradients(grads.output, dout, cache.act2);
  const num::Matrix dpre2 = through_activation(num::matmul(dout, params.output.weight), cache.pre2, cache.mask2);
  layer_gradients(grads.hidden2, dpre2, cache.act1);
  const num::Matrix dpre1 = through_activation(num::matmul(dpre2, params.hidden2.weight), cache.pre1, cache.mask1);
  layer_gradients(grads.hidden1, dpre1, cache.inputs.x);

  if (params.common.scaling.revin.enabled) {
    const num::Matrix dx = num::matmul(dpre1, params.hidden1.weight);
    const auto affine_grads =
        revin_affine_gradients(params.common.scaling, cache.inputs, cache.model_out, grad_outputs, dx);
    grads.common.scaling.revin.affine_scale = affine_grads.scale;
    grads.common.scaling.revin.affine_shift = affine_grads.shift;
  }
  return grads;
}

num::Matrix predict(const QrdnnParams& params, const num::Matrix& inputs) {
  auto out = forward(params, inputs, Mode::Eval).quantiles;
  if (params.common.config.sort_quantiles)
    sort_quantile_blocks(out, params.common.config.horizon, params.common.config.levels.size());
  return out;
}

}  // namespace qnbm::model
