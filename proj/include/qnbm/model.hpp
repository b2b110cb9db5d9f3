#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "qnbm/forecast.hpp"
#include "qnbm/qnbm_model.hpp"
#include "qnbm/qrdnn_model.hpp"

namespace qnbm::model {

using ModelParams = std::variant<QnbmParams, QrdnnParams>;

ModelKind kind_of(const ModelParams& params) noexcept;
const ModelCommon& common_of(const ModelParams& params) noexcept;
ModelCommon& common_of(ModelParams& params) noexcept;
std::size_t parameter_count(const ModelParams& params);

ModelParams init_model(const ModelConfig& config, const data::WindowedDataset& train, double dropout_rate,
                       num::Rng& rng);

/// Eval-mode prediction (sorted when configured), B × (H·|Γ|).
num::Matrix predict(const ModelParams& params, const num::Matrix& inputs);
QuantileForecast forecast(const ModelParams& params, const data::WindowedDataset& data);

/// ShapeError when the feature counts differ (naming both), IncompatibleError
/// when the feature names differ.
void ensure_compatible(const ModelParams& params, const data::WindowedDataset& data);

/// Config, feature names, scaling and every tensor compared bit for bit.
bool bitwise_equal(const ModelParams& a, const ModelParams& b);

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "QNBMCKPT"  u32 format version  u64 header length  header (JSON text)
//   tensor payload (little-endian f64, header order)  u64 FNV-1a of all prior bytes
//
// Every floating-point value lives in the payload so a reload is bit-exact;
// the header records shapes, quantile count, feature names and their hash,
// the model-type tag and the RNG algorithm id.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelParams& params);
/// IntegrityError on truncation or corruption, IncompatibleError on a
/// format-version mismatch.
ModelParams deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace qnbm::model
