#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "qnbm/forecast.hpp"

namespace qnbm::model {

enum class ModelKind { Qnbm, Qrdnn };

std::string_view to_string(ModelKind kind) noexcept;
/// Accepts "qnbm" or "qrdnn"; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view text);

enum class Mode { Train, Eval };

/// Architecture choices shared by both model kinds. Fields that only apply
/// to QNBM (basis_count, rank, factorize_*) are ignored by the QR-DNN.
struct ModelConfig {
  ModelKind kind = ModelKind::Qnbm;
  std::size_t hidden_units = 64;  // n_u
  std::size_t basis_count = 64;   // n_z
  std::size_t rank = 16;
  bool factorize_shape = true;
  bool factorize_head = true;
  bool revin = false;
  double revin_epsilon = 1e-5;
  bool sort_quantiles = true;
  std::size_t horizon = 24;
  std::vector<double> levels = percentile_levels();

  void validate() const;
};

}  // namespace qnbm::model
