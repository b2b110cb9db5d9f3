#pragma once

#include <vector>

#include "qnbm/qnbm_model.hpp"

namespace qnbm::model {

struct DenseLayer {
  num::Matrix weight;  // out × in
  num::Matrix bias;    // out × 1
};

/// Two ReLU hidden layers with dropout, then a linear map to all H·|Γ| quantiles.
struct QrdnnParams {
  ModelCommon common;
  DenseLayer hidden1;
  DenseLayer hidden2;
  DenseLayer output;
  double dropout_rate = 0.0;

  std::size_t feature_count() const noexcept { return common.feature_count(); }
};

std::vector<NamedTensor> trainable_tensors(QrdnnParams& params);
std::vector<ConstNamedTensor> trainable_tensors(const QrdnnParams& params);

struct QrdnnCache {
  std::uint64_t revision = 0;
  Mode mode = Mode::Eval;
  ScaledInputs inputs;
  num::Matrix pre1, mask1, act1;  // act = relu(pre) ⊙ mask
  num::Matrix pre2, mask2, act2;
  num::Matrix model_out;
};

struct QrdnnForward {
  num::Matrix quantiles;
  QrdnnCache cache;
};

QrdnnParams init_qrdnn(const ModelConfig& config, const data::WindowedDataset& train, double dropout_rate,
                       num::Rng& rng);
QrdnnForward forward(const QrdnnParams& params, const num::Matrix& inputs, Mode mode, num::Rng* rng = nullptr);
QrdnnParams backward(const QrdnnParams& params, const QrdnnCache& cache, const num::Matrix& grad_outputs);
num::Matrix predict(const QrdnnParams& params, const num::Matrix& inputs);

}  // namespace qnbm::model
