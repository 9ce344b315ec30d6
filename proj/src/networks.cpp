#include "c2f/networks.hpp"

namespace c2f {

namespace {
void check_multipliers(const std::vector<int>& m, const char* who) {
  if (m.empty()) throw ConfigError(std::string(who) + ".channel_multipliers must not be empty");
  for (int v : m) {
    if (v < 1) throw ConfigError(std::string(who) + ".channel_multipliers must be positive");
  }
}
}  // namespace

void ModelConfig::validate() const {
  try {
    guidance.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (!use_cpm && !use_irm) throw ConfigError("model needs the coarse predictor, the denoiser, or both");
  if (coarse.base_channels < 1 || denoiser.base_channels < 1) throw ConfigError("base_channels must be positive");
  if (coarse.out_channels != 1) throw ConfigError("networks.coarse.out_channels must be 1");
  check_multipliers(coarse.channel_multipliers, "networks.coarse");
  check_multipliers(denoiser.channel_multipliers, "networks.denoiser");
  if (denoiser.gamma_embedding_dim < 2 || denoiser.gamma_embedding_dim % 2 != 0) {
    throw ConfigError("networks.denoiser.gamma_embedding_dim must be a positive even integer");
  }
  if (aux_feature_channels < 1) throw ConfigError("networks.aux_feature_channels must be positive");
  if (use_cpm && use_irm && coarse.base_channels <= denoiser.base_channels) {
    throw ConfigError("networks.coarse.base_channels (" + std::to_string(coarse.base_channels) +
                      ") must exceed networks.denoiser.base_channels (" + std::to_string(denoiser.base_channels) +
                      ")");
  }
}

}  // namespace c2f
