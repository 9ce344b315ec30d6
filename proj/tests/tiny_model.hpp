#pragma once

// A deliberately small double-precision model and a random training example
// for gradient checks.

#include "c2f/objective.hpp"

namespace c2f::testing {

inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.guidance.n_neighbors = 2;
  m.guidance.pyramid_levels = 2;
  m.coarse.base_channels = 3;
  m.coarse.channel_multipliers = {1, 2};
  m.denoiser.base_channels = 2;
  m.denoiser.channel_multipliers = {1, 2};
  m.denoiser.gamma_embedding_dim = 4;
  m.aux_feature_channels = 3;
  return m;
}

/// Replace every parameter by N(0, scale^2) so that zero-initialized layers
/// and unit norm gains do not hide gradient paths.
template <class S>
void randomize(Networks<S>& nets, std::uint64_t seed, double scale = 0.4) {
  Rng rng(seed);
  for (auto& v : nets.params().values()) {
    rng.fill_normal(v);
    v *= static_cast<S>(scale);
  }
}

template <class S>
Tensor<S> random_tensor(Rng& rng, int c, int h, int w, double scale = 1.0) {
  Tensor<S> t(c, h, w);
  rng.fill_normal(t.data);
  t.data *= static_cast<S>(scale);
  return t;
}

template <class S>
TrainingExample<S> random_example(const ModelConfig& cfg, int h, int w, int n_negatives, std::uint64_t seed) {
  Rng rng(seed);
  TrainingExample<S> ex;
  const GuidanceConfig& g = cfg.guidance;
  ex.condition = random_tensor<S>(rng, cfg.condition_channels(), h, w, 0.5);
  ex.target = random_tensor<S>(rng, 1, h, w, 0.5);
  for (int k = 1; k <= g.pyramid_levels; ++k) {
    if (cfg.aux_channels() > 0) ex.pyramid.push_back(random_tensor<S>(rng, cfg.aux_channels(), h >> k, w >> k, 0.5));
    if (g.use_nas) ex.nas_target.push_back(random_tensor<S>(rng, g.n_neighbors, h >> k, w >> k, 0.5));
    if (g.use_spectrum) ex.spectrum_target.push_back(random_tensor<S>(rng, 1, h >> k, w >> k, 0.5));
  }
  for (int i = 0; i < n_negatives; ++i) ex.negatives.push_back(random_tensor<S>(rng, 1, h, w, 0.5));
  return ex;
}

}  // namespace c2f::testing
