#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qnbm/dataset.hpp"
#include "qnbm/matrix.hpp"
#include "qnbm/model_config.hpp"
#include "qnbm/rng.hpp"
#include "qnbm/scaling.hpp"

namespace qnbm::model {

/// Low-rank factor pair standing for the (rows × cols) matrix a·bᵀ.
struct FactorizedMatrix {
  num::Matrix a;  // rows × r
  num::Matrix b;  // cols × r

  std::size_t rows() const noexcept { return a.rows(); }
  std::size_t cols() const noexcept { return b.rows(); }
  std::size_t rank() const noexcept { return a.cols(); }
  std::size_t parameter_count() const noexcept { return a.size() + b.size(); }
};

/// Dense a·bᵀ.
num::Matrix effective(const FactorizedMatrix& fm);

/// A linear map stored either densely or as a FactorizedMatrix.
struct Projection {
  bool factorized = false;
  num::Matrix dense;
  FactorizedMatrix factors;

  std::size_t rows() const noexcept { return factorized ? factors.rows() : dense.rows(); }
  std::size_t cols() const noexcept { return factorized ? factors.cols() : dense.cols(); }
  std::size_t parameter_count() const noexcept { return factorized ? factors.parameter_count() : dense.size(); }
  num::Matrix effective() const { return factorized ? model::effective(factors) : dense; }
};

/// Shared two-layer network applied to every scalar feature value:
/// z(x) = relu(w2 · relu(w1 · x) + b2). No first-layer bias.
struct BasisNetwork {
  num::Matrix w1;  // n_u × 1
  num::Matrix w2;  // n_z × n_u
  num::Matrix b2;  // n_z × 1
  double dropout_rate = 0.0;

  std::size_t hidden_units() const noexcept { return w1.rows(); }
  std::size_t basis_count() const noexcept { return w2.rows(); }
};

/// Column i of w aggregates the shared bases into shape function f_i.
struct ShapeProjection {
  Projection w;  // n_z × n_f
};

/// q̂[h, γ] = beta[h, γ] + Σ_i v[h·|Γ| + γ, i] · f_i.
struct QuantileHead {
  Projection v;      // (H·|Γ|) × n_f
  num::Matrix beta;  // H × |Γ|
  std::vector<double> levels;
  std::size_t horizon = 0;
};

/// Fields shared by every model kind: configuration, feature provenance
/// and the raw-to-model-space transforms.
struct ModelCommon {
  ModelConfig config;
  std::vector<std::string> feature_names;
  std::size_t price_lag_columns = 0;
  InputScaling scaling;
  /// Bumped by every optimizer step; caches remember the revision they saw.
  std::uint64_t revision = 0;

  std::size_t feature_count() const noexcept { return feature_names.size(); }
  std::size_t output_width() const noexcept { return config.horizon * config.levels.size(); }
};

struct QnbmParams {
  ModelCommon common;
  BasisNetwork basis;
  ShapeProjection shape;
  QuantileHead head;

  std::size_t feature_count() const noexcept { return common.feature_count(); }
};

struct NamedTensor {
  std::string name;
  num::Matrix* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const num::Matrix* tensor;
};

std::vector<NamedTensor> trainable_tensors(QnbmParams& params);
std::vector<ConstNamedTensor> trainable_tensors(const QnbmParams& params);

/// Activations kept for the backward pass. Basis rows are indexed
/// (row · n_f + feature).
struct QnbmCache {
  std::uint64_t revision = 0;
  Mode mode = Mode::Eval;
  ScaledInputs inputs;
  num::Matrix hidden;      // relu(w1·x), (B·n_f) × n_u
  num::Matrix basis_pre;   // (B·n_f) × n_z
  num::Matrix basis_mask;  // inverted-dropout multipliers; empty when inactive
  num::Matrix basis_out;   // z after ReLU and dropout
  num::Matrix shape_mid;   // z·A_W, factorized shape projection only
  num::Matrix shape_out;   // f, B × n_f
  num::Matrix head_mid;    // f·B_V, factorized head only
  num::Matrix model_out;   // model-space quantiles, B × (H·|Γ|)
};

struct QnbmForward {
  num::Matrix quantiles;  // raw (unsorted) outputs in price units
  QnbmCache cache;
};

/// Random initialization: He-scaled basis weights, N(0, 0.05²) factors,
/// scaling fitted on `train`, beta set to unconditional training quantiles.
QnbmParams init_qnbm(const ModelConfig& config, const data::WindowedDataset& train, double dropout_rate,
                     num::Rng& rng);

/// Train mode needs an rng whenever the dropout rate is positive.
QnbmForward forward(const QnbmParams& params, const num::Matrix& inputs, Mode mode, num::Rng* rng = nullptr);

/// Returns a QnbmParams-shaped object whose trainable tensors hold dL/dθ for
/// the upstream gradient dL/dq (same shape as QnbmForward::quantiles).
/// Throws ContractError when the cache was produced under another revision.
QnbmParams backward(const QnbmParams& params, const QnbmCache& cache, const num::Matrix& grad_outputs);

/// Eval-mode outputs, sorted per (row, hour) when the config asks for it.
num::Matrix predict(const QnbmParams& params, const num::Matrix& inputs);

/// Shared basis outputs z(x) for model-space scalar values, (n × n_z).
num::Matrix basis_outputs(const BasisNetwork& basis, std::span<const double> model_values);
/// f_i at model-space values of feature i.
std::vector<double> shape_values(const QnbmParams& params, std::size_t feature, std::span<const double> model_values);
/// v[h·|Γ| + g, i], read from the dense or factorized head.
double head_weight(const QnbmParams& params, std::size_t hour, std::size_t level, std::size_t feature);

}  // namespace qnbm::model
