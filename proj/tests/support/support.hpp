// Shared fixtures and independent oracles for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "qnbm/model.hpp"
#include "qnbm/training.hpp"

namespace qnbm::testing {

inline data::WindowedDataset random_dataset(num::Rng& rng, std::size_t rows, std::size_t nf, std::size_t horizon,
                                            std::size_t lag_columns = 0) {
  data::WindowedDataset d;
  d.inputs = num::sample_normal(rng, rows, nf, 10.0, 3.0);
  d.targets = num::Matrix(rows, horizon);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < horizon; ++h)
      d.targets(r, h) = 0.5 * d.inputs(r, h % nf) + 0.3 * d.inputs(r, (h + 1) % nf) + rng.normal();
  for (std::size_t i = 0; i < nf; ++i) d.feature_names.push_back("f" + std::to_string(i));
  for (std::size_t r = 0; r < rows; ++r) d.days.push_back(static_cast<data::DayNumber>(18000 + r));
  d.price_lag_columns = lag_columns;
  return d;
}

inline model::ModelConfig small_config(model::ModelKind kind, std::size_t horizon, std::vector<double> levels) {
  model::ModelConfig c;
  c.kind = kind;
  c.hidden_units = 7;
  c.basis_count = 6;
  c.rank = 2;
  c.horizon = horizon;
  c.levels = std::move(levels);
  return c;
}

/// Scaling that leaves inputs and outputs untouched.
inline model::InputScaling identity_scaling(std::size_t nf) {
  model::InputScaling s;
  s.columns.mean.assign(nf, 0.0);
  s.columns.scale.assign(nf, 1.0);
  s.columns.min.assign(nf, -1.0);
  s.columns.max.assign(nf, 1.0);
  s.target = {0.0, 1.0};
  return s;
}

/// Hand-built QNBM with random weights, identity scaling, H = 2 and three levels.
inline model::QnbmParams crafted_qnbm(std::size_t nf, bool factorized, std::uint64_t seed = 11) {
  num::Rng rng(seed);
  model::QnbmParams p;
  p.common.config = small_config(model::ModelKind::Qnbm, 2, {0.25, 0.5, 0.75});
  p.common.config.factorize_shape = factorized;
  p.common.config.factorize_head = factorized;
  for (std::size_t i = 0; i < nf; ++i) p.common.feature_names.push_back("x" + std::to_string(i));
  p.common.scaling = testing::identity_scaling(nf);
  const std::size_t nu = 7, nz = 6, width = 6, r = 2;
  p.basis.w1 = num::sample_normal(rng, nu, 1, 0.0, 1.0);
  p.basis.w2 = num::sample_normal(rng, nz, nu, 0.0, 0.5);
  p.basis.b2 = num::sample_normal(rng, nz, 1, 0.0, 0.2);
  p.shape.w.factorized = factorized;
  p.head.v.factorized = factorized;
  if (factorized) {
    p.shape.w.factors = {num::sample_normal(rng, nz, r, 0.0, 0.7), num::sample_normal(rng, nf, r, 0.0, 0.7)};
    p.head.v.factors = {num::sample_normal(rng, width, r, 0.0, 0.7), num::sample_normal(rng, nf, r, 0.0, 0.7)};
  } else {
    p.shape.w.dense = num::sample_normal(rng, nz, nf, 0.0, 0.7);
    p.head.v.dense = num::sample_normal(rng, width, nf, 0.0, 0.7);
  }
  p.head.beta = num::sample_normal(rng, 2, 3, 0.0, 1.0);
  p.head.levels = p.common.config.levels;
  p.head.horizon = 2;
  return p;
}

/// Literal pinball loss with the tie going to the y ≤ q branch.
inline double pinball_oracle(double y, double q, double gamma) {
  const double over = y > q ? 1.0 : 0.0;
  const double under = y <= q ? 1.0 : 0.0;
  return (y - q) * gamma * over + (q - y) * (1.0 - gamma) * under;
}

/// Kupiec LR computed in 50-digit decimal arithmetic.
inline double kupiec_lr_oracle(std::size_t x, std::size_t n, double p) {
  using big = boost::multiprecision::cpp_dec_float_50;
  const big bx(x), bn(n), bp(p);
  auto xlog = [](const big& a, const big& b) { return a == 0 ? big(0) : a * log(b); };
  const big phat = bx / bn;
  const big lr = -2 * (xlog(bn - bx, 1 - bp) + xlog(bx, bp)) + 2 * (xlog(bn - bx, 1 - phat) + xlog(bx, phat));
  return lr.convert_to<double>();
}

/// f_i(x) for one scalar feature value, straight from the basis and shape
/// equations (identity scaling, RevIN off).
inline double qnbm_scalar_shape(const model::QnbmParams& p, const num::Matrix& w, std::size_t i, double x) {
  const auto& b = p.basis;
  double f = 0.0;
  for (std::size_t k = 0; k < b.basis_count(); ++k) {
    double pre = b.b2(k, 0);
    for (std::size_t j = 0; j < b.hidden_units(); ++j) pre += b.w2(k, j) * std::max(0.0, b.w1(j, 0) * x);
    f += w(k, i) * std::max(0.0, pre);
  }
  return f;
}

/// Scalar re-implementation of the basis / shape / head equations for a QNBM
/// with identity scaling and RevIN off, one row at a time.
inline std::vector<double> qnbm_scalar_oracle(const model::QnbmParams& p, std::span<const double> x) {
  const num::Matrix w = p.shape.w.effective();
  const num::Matrix v = p.head.v.effective();
  const std::size_t nf = x.size();
  std::vector<double> f(nf);
  for (std::size_t i = 0; i < nf; ++i) f[i] = qnbm_scalar_shape(p, w, i, x[i]);
  std::vector<double> q(v.rows());
  const std::size_t nl = p.head.levels.size();
  for (std::size_t h = 0; h < p.head.horizon; ++h)
    for (std::size_t g = 0; g < nl; ++g) {
      double acc = p.head.beta(h, g);
      for (std::size_t i = 0; i < nf; ++i) acc += v(h * nl + g, i) * f[i];
      q[h * nl + g] = acc;
    }
  return q;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// Compares analytic pinball-loss gradients with central differences.
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
template <class Params>
GradientCheck check_gradients(Params params, const num::Matrix& x, const num::Matrix& y, double step = 1e-5,
                              double floor = 1e-6) {
  const auto& levels = params.common.config.levels;
  auto loss_at = [&](const Params& p) {
    return train::pinball_loss(y, model::forward(p, x, model::Mode::Train).quantiles, levels).loss;
  };
  auto fw = model::forward(params, x, model::Mode::Train);
  const auto pl = train::pinball_loss(y, fw.quantiles, levels);
  const Params grads = model::backward(params, fw.cache, pl.gradient);
  const auto gt = model::trainable_tensors(grads);
  GradientCheck out;
  auto pt = model::trainable_tensors(params);
  for (std::size_t t = 0; t < pt.size(); ++t) {
    auto values = pt[t].tensor->values();
    const auto analytic = gt[t].tensor->values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + step;
      const double up = loss_at(params);
      values[j] = saved - step;
      const double down = loss_at(params);
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double rel =
          std::abs(numeric - analytic[j]) / std::max({std::abs(numeric), std::abs(analytic[j]), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_tensor = pt[t].name;
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace qnbm::testing
