#include "qnbm/qnbm_model.hpp"

#include <algorithm>
#include <cmath>

#include "qnbm/error.hpp"
#include "qnbm/forecast.hpp"
#include "qnbm/model_support.hpp"

namespace qnbm::model {

namespace {

void zero_tensors(QnbmParams& p) {
  for (auto& t : trainable_tensors(p)) t.tensor->fill(0.0);
}

Projection init_projection(bool factorized, std::size_t rows, std::size_t cols, std::size_t rank,
                           const char* what, num::Rng& rng) {
  Projection p;
  p.factorized = factorized;
  if (factorized) {
    if (rank == 0 || rank > std::min(rows, cols)) {
      throw ParameterError(std::string(what) + ": rank " + std::to_string(rank) + " must lie in [1, min(" +
                           std::to_string(rows) + ", " + std::to_string(cols) + ")]");
    }
    p.factors.a = num::sample_normal(rng, rows, rank, 0.0, 0.05);
    p.factors.b = num::sample_normal(rng, cols, rank, 0.0, 0.05);
  } else {
    p.dense = num::sample_normal(rng, rows, cols, 0.0, 0.05);
  }
  return p;
}

void add_named(std::vector<NamedTensor>& out, const std::string& prefix, Projection& p) {
  if (p.factorized) {
    out.push_back({prefix + ".a", &p.factors.a});
    out.push_back({prefix + ".b", &p.factors.b});
  } else {
    out.push_back({prefix, &p.dense});
  }
}

}  // namespace

num::Matrix effective(const FactorizedMatrix& fm) {
  if (fm.a.cols() != fm.b.cols())
    throw ShapeError("factor ranks differ: " + fm.a.shape_string() + " vs " + fm.b.shape_string());
  return num::matmul_nt(fm.a, fm.b);
}

std::vector<NamedTensor> trainable_tensors(QnbmParams& params) {
  std::vector<NamedTensor> out{{"basis.w1", &params.basis.w1},
                               {"basis.w2", &params.basis.w2},
                               {"basis.b2", &params.basis.b2}};
  add_named(out, "shape.w", params.shape.w);
  add_named(out, "head.v", params.head.v);
  out.push_back({"head.beta", &params.head.beta});
  if (params.common.scaling.revin.enabled) {
    out.push_back({"revin.scale", &params.common.scaling.revin.affine_scale});
    out.push_back({"revin.shift", &params.common.scaling.revin.affine_shift});
  }
  return out;
}

std::vector<ConstNamedTensor> trainable_tensors(const QnbmParams& params) {
  std::vector<ConstNamedTensor> out;
  for (const auto& t : trainable_tensors(const_cast<QnbmParams&>(params))) out.push_back({t.name, t.tensor});
  return out;
}

QnbmParams init_qnbm(const ModelConfig& config, const data::WindowedDataset& train, double dropout_rate,
                     num::Rng& rng) {
  config.validate();
  if (config.kind != ModelKind::Qnbm) throw ConfigError("init_qnbm called with a non-QNBM configuration");
  if (train.size() == 0) throw DataError("cannot initialize a model from an empty training set");
  if (train.horizon() != config.horizon)
    throw ShapeError("dataset horizon " + std::to_string(train.horizon()) + " differs from model horizon " +
                     std::to_string(config.horizon));
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");

  QnbmParams p;
  p.common.config = config;
  p.common.feature_names = train.feature_names;
  p.common.price_lag_columns = train.price_lag_columns;
  p.common.scaling = fit_scaling(train, config.revin, config.revin_epsilon);

  const std::size_t nu = config.hidden_units;
  const std::size_t nz = config.basis_count;
  const std::size_t nf = train.feature_count();
  const std::size_t width = config.horizon * config.levels.size();

  p.basis.w1 = num::sample_normal(rng, nu, 1, 0.0, std::sqrt(2.0));
  p.basis.w2 = num::sample_normal(rng, nz, nu, 0.0, std::sqrt(2.0 / static_cast<double>(nu)));
  p.basis.b2 = num::Matrix(nz, 1);
  p.basis.dropout_rate = dropout_rate;
  p.shape.w = init_projection(config.factorize_shape, nz, nf, config.rank, "shape projection", rng);
  p.head.v = init_projection(config.factorize_head, width, nf, config.rank, "quantile head", rng);
  p.head.levels = config.levels;
  p.head.horizon = config.horizon;
  p.head.beta = unconditional_quantiles(p.common.scaling, train, config.levels);
  return p;
}

num::Matrix basis_outputs(const BasisNetwork& basis, std::span<const double> model_values) {
  const std::size_t n = model_values.size();
  const std::size_t nu = basis.hidden_units();
  num::Matrix hidden(n, nu);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < nu; ++j) {
      const double v = basis.w1(j, 0) * model_values[i];
      hidden(i, j) = v > 0.0 ? v : 0.0;
    }
  num::Matrix pre = num::matmul_nt(hidden, basis.w2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < pre.cols(); ++k) pre(i, k) += basis.b2(k, 0);
  return num::relu(pre);
}

QnbmForward forward(const QnbmParams& params, const num::Matrix& inputs, Mode mode, num::Rng* rng) {
  const auto& common = params.common;
  const std::size_t nf = common.feature_count();
  if (inputs.cols() != nf)
    throw ShapeError("QNBM expects " + std::to_string(nf) + " input columns, got " + std::to_string(inputs.cols()));
  const std::size_t batch = inputs.rows();
  const std::size_t n = batch * nf;
  const std::size_t nu = params.basis.hidden_units();
  const std::size_t nz = params.basis.basis_count();

  QnbmForward out;
  QnbmCache& cache = out.cache;
  cache.revision = common.revision;
  cache.mode = mode;
  cache.inputs = scale_inputs(common.scaling, inputs, common.feature_names);
  const auto x = cache.inputs.x.values();

  // Shared basis network, evaluated once per (row, feature) scalar.
  cache.hidden = num::Matrix(n, nu);
  for (std::size_t s = 0; s < n; ++s) {
    auto h = cache.hidden.row(s);
    for (std::size_t j = 0; j < nu; ++j) {
      const double v = params.basis.w1(j, 0) * x[s];
      h[j] = v > 0.0 ? v : 0.0;
    }
  }
  cache.basis_pre = num::matmul_nt(cache.hidden, params.basis.w2);
  for (std::size_t s = 0; s < n; ++s) {
    auto row = cache.basis_pre.row(s);
    for (std::size_t k = 0; k < nz; ++k) row[k] += params.basis.b2(k, 0);
  }
  cache.basis_out = num::relu(cache.basis_pre);
  const double rate = params.basis.dropout_rate;
  if (mode == Mode::Train && rate > 0.0) {
    if (rng == nullptr) throw ContractError("train-mode forward with dropout needs a random generator");
    cache.basis_mask = dropout_mask(*rng, n, nz, rate);
    cache.basis_out = num::hadamard(cache.basis_out, cache.basis_mask);
  }

  // Shape functions f_i = Σ_k W[k, i] z_k(x_i).
  cache.shape_out = num::Matrix(batch, nf);
  const Projection& w = params.shape.w;
  if (w.factorized) {
    cache.shape_mid = num::matmul(cache.basis_out, w.factors.a);
    const std::size_t r = w.factors.rank();
    for (std::size_t d = 0; d < batch; ++d)
      for (std::size_t i = 0; i < nf; ++i) {
        auto t = cache.shape_mid.row(d * nf + i);
        auto b = w.factors.b.row(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) acc += t[k] * b[k];
        cache.shape_out(d, i) = acc;
      }
  } else {
    for (std::size_t d = 0; d < batch; ++d)
      for (std::size_t i = 0; i < nf; ++i) {
        auto z = cache.basis_out.row(d * nf + i);
        double acc = 0.0;
        for (std::size_t k = 0; k < nz; ++k) acc += w.dense(k, i) * z[k];
        cache.shape_out(d, i) = acc;
      }
  }

  // Quantile head g = beta + V f.
  const Projection& v = params.head.v;
  if (v.factorized) {
    cache.head_mid = num::matmul(cache.shape_out, v.factors.b);
    cache.model_out = num::matmul_nt(cache.head_mid, v.factors.a);
  } else {
    cache.model_out = num::matmul_nt(cache.shape_out, v.dense);
  }
  const auto beta = params.head.beta.values();
  for (std::size_t d = 0; d < batch; ++d) {
    auto row = cache.model_out.row(d);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += beta[c];
  }
  out.quantiles = unscale_outputs(common.scaling, cache.model_out, cache.inputs.stats);
  return out;
}

QnbmParams backward(const QnbmParams& params, const QnbmCache& cache, const num::Matrix& grad_outputs) {
  if (cache.revision != params.common.revision) {
    throw ContractError("stale forward cache: produced at parameter revision " + std::to_string(cache.revision) +
                        ", parameters are at revision " + std::to_string(params.common.revision));
  }
  num::require_same_shape(grad_outputs, cache.model_out, "QNBM backward");
  const std::size_t batch = cache.shape_out.rows();
  const std::size_t nf = params.feature_count();
  const std::size_t n = batch * nf;
  const std::size_t nu = params.basis.hidden_units();
  const std::size_t nz = params.basis.basis_count();

  QnbmParams grads = params;
  zero_tensors(grads);

  const num::Matrix dg = output_gradient_to_model(params.common.scaling, cache.inputs.stats, grad_outputs);
  const num::Matrix dbeta = num::column_sums(dg);
  std::copy(dbeta.values().begin(), dbeta.values().end(), grads.head.beta.values().begin());

  num::Matrix df;
  const Projection& v = params.head.v;
  if (v.factorized) {
    grads.head.v.factors.a = num::matmul_tn(dg, cache.head_mid);
    const num::Matrix dt = num::matmul(dg, v.factors.a);
    grads.head.v.factors.b = num::matmul_tn(cache.shape_out, dt);
    df = num::matmul_nt(dt, v.factors.b);
  } else {
    grads.head.v.dense = num::matmul_tn(dg, cache.shape_out);
    df = num::matmul(dg, v.dense);
  }

  num::Matrix dz(n, nz);
  const Projection& w = params.shape.w;
  if (w.factorized) {
    const std::size_t r = w.factors.rank();
    num::Matrix dt(n, r);
    auto& db = grads.shape.w.factors.b;
    for (std::size_t d = 0; d < batch; ++d)
      for (std::size_t i = 0; i < nf; ++i) {
        const double g = df(d, i);
        auto t = cache.shape_mid.row(d * nf + i);
        auto bw = w.factors.b.row(i);
        auto dtr = dt.row(d * nf + i);
        auto dbr = db.row(i);
        for (std::size_t k = 0; k < r; ++k) {
          dtr[k] = g * bw[k];
          dbr[k] += g * t[k];
        }
      }
    grads.shape.w.factors.a = num::matmul_tn(cache.basis_out, dt);
    dz = num::matmul_nt(dt, w.factors.a);
  } else {
    auto& dw = grads.shape.w.dense;
    for (std::size_t d = 0; d < batch; ++d)
      for (std::size_t i = 0; i < nf; ++i) {
        const double g = df(d, i);
        auto z = cache.basis_out.row(d * nf + i);
        auto dzr = dz.row(d * nf + i);
        for (std::size_t k = 0; k < nz; ++k) {
          dw(k, i) += g * z[k];
          dzr[k] = w.dense(k, i) * g;
        }
      }
  }

  // Through dropout and the outer ReLU.
  const bool masked = !cache.basis_mask.empty();
  for (std::size_t s = 0; s < n; ++s) {
    auto dzr = dz.row(s);
    auto pre = cache.basis_pre.row(s);
    for (std::size_t k = 0; k < nz; ++k) {
      double g = dzr[k];
      if (masked) g *= cache.basis_mask(s, k);
      dzr[k] = pre[k] > 0.0 ? g : 0.0;
    }
  }
  const num::Matrix db2 = num::column_sums(dz);
  for (std::size_t k = 0; k < nz; ++k) grads.basis.b2(k, 0) = db2(0, k);
  grads.basis.w2 = num::matmul_tn(dz, cache.hidden);
  num::Matrix du = num::matmul(dz, params.basis.w2);

  const auto x = cache.inputs.x.values();
  num::Matrix dx(batch, nf);
  auto dxv = dx.values();
  for (std::size_t s = 0; s < n; ++s) {
    auto dur = du.row(s);
    auto h = cache.hidden.row(s);
    double acc = 0.0;
    for (std::size_t j = 0; j < nu; ++j) {
      if (h[j] <= 0.0) continue;
      grads.basis.w1(j, 0) += dur[j] * x[s];
      acc += dur[j] * params.basis.w1(j, 0);
    }
    dxv[s] = acc;
  }

  if (params.common.scaling.revin.enabled) {
    const auto affine =
        revin_affine_gradients(params.common.scaling, cache.inputs, cache.model_out, grad_outputs, dx);
    grads.common.scaling.revin.affine_scale = affine.scale;
    grads.common.scaling.revin.affine_shift = affine.shift;
  }
  return grads;
}

num::Matrix predict(const QnbmParams& params, const num::Matrix& inputs) {
  auto out = forward(params, inputs, Mode::Eval).quantiles;
  if (params.common.config.sort_quantiles)
    sort_quantile_blocks(out, params.head.horizon, params.head.levels.size());
  return out;
}

std::vector<double> shape_values(const QnbmParams& params, std::size_t feature, std::span<const double> model_values) {
  if (feature >= params.feature_count())
    throw ParameterError("feature index " + std::to_string(feature) + " out of range");
  const num::Matrix z = basis_outputs(params.basis, model_values);
  const std::size_t nz = params.basis.basis_count();
  std::vector<double> column(nz);
  const Projection& w = params.shape.w;
  if (w.factorized) {
    for (std::size_t k = 0; k < nz; ++k) {
      double acc = 0.0;
      for (std::size_t r = 0; r < w.factors.rank(); ++r) acc += w.factors.a(k, r) * w.factors.b(feature, r);
      column[k] = acc;
    }
  } else {
    for (std::size_t k = 0; k < nz; ++k) column[k] = w.dense(k, feature);
  }
  std::vector<double> out(model_values.size());
  for (std::size_t s = 0; s < out.size(); ++s) {
    double acc = 0.0;
    for (std::size_t k = 0; k < nz; ++k) acc += column[k] * z(s, k);
    out[s] = acc;
  }
  return out;
}

double head_weight(const QnbmParams& params, std::size_t hour, std::size_t level, std::size_t feature) {
  const std::size_t row = hour * params.head.levels.size() + level;
  const Projection& v = params.head.v;
  if (v.factorized) {
    double acc = 0.0;
    for (std::size_t r = 0; r < v.factors.rank(); ++r) acc += v.factors.a(row, r) * v.factors.b(feature, r);
    return acc;
  }
  return v.dense(row, feature);
}

}  // namespace qnbm::model
