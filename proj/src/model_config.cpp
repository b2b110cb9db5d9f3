#include "qnbm/model_config.hpp"

#include "qnbm/error.hpp"

namespace qnbm::model {

std::string_view to_string(ModelKind kind) noexcept {
  return kind == ModelKind::Qnbm ? "qnbm" : "qrdnn";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "qnbm") return ModelKind::Qnbm;
  if (text == "qrdnn") return ModelKind::Qrdnn;
  throw ConfigError("unknown model kind '" + std::string(text) + "' (expected qnbm or qrdnn)");
}

void ModelConfig::validate() const {
  if (hidden_units == 0) throw ConfigError("hidden_units must be positive");
  if (kind == ModelKind::Qnbm) {
    if (basis_count == 0) throw ConfigError("basis_count must be positive");
    if ((factorize_shape || factorize_head) && rank == 0) throw ConfigError("rank must be positive");
  }
  if (horizon == 0) throw ConfigError("horizon must be positive");
  if (!(revin_epsilon > 0.0)) throw ConfigError("revin_epsilon must be positive");
  try {
    validate_levels(levels);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace qnbm::model
