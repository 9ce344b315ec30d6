#pragma once

// Auxiliary guidance built from a volume around one axial slice: the
// neighboring slices, the centered log-magnitude spectrum of the slice, and
// average-pooled pyramids of both.

#include <string>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f {

enum class SpectrumMode { log_magnitude };

struct GuidanceConfig {
  int n_neighbors = 4;
  int pyramid_levels = 3;
  SpectrumMode spectrum_mode = SpectrumMode::log_magnitude;
  bool use_nas = true;
  bool use_spectrum = true;

  void validate() const;
  /// Number of guidance channels fed to the networks.
  int aux_channels() const { return (use_nas ? n_neighbors : 0) + (use_spectrum ? 1 : 0); }
};

struct GuidanceBundle {
  Tensor<float> nas;       // [n_neighbors, H, W]
  Tensor<float> spectrum;  // [1, H, W]
  std::vector<Tensor<float>> nas_pyramid;       // level k = 1..M at index k-1
  std::vector<Tensor<float>> spectrum_pyramid;
};

/// Slices at offsets -n/2..-1, +1..+n/2 around z; out-of-range offsets are
/// replaced by the nearest valid slice.
Tensor<float> neighboring_slices(const Volume& volume, int z, int n_neighbors);

/// Centered log(1 + |DFT|) of a slice, max-normalized to [0, 1].
Tensor<float> spectrum(const Eigen::Ref<const Mat<float>>& slice);

/// Levels k = 1..M, level k downsampled by 2^k.
template <class S>
std::vector<Tensor<S>> build_pyramid(const Tensor<S>& x, int levels) {
  if (levels < 1) throw ParameterError("pyramid needs at least one level");
  const int f = 1 << levels;
  if (x.height % f != 0 || x.width % f != 0) {
    throw ShapeError("spatial size " + shape_string(x) + " is not divisible by 2^" + std::to_string(levels));
  }
  std::vector<Tensor<S>> out;
  out.reserve(levels);
  const Tensor<S>* cur = &x;
  for (int k = 0; k < levels; ++k) {
    out.push_back(avg_pool2(*cur));
    cur = &out.back();
  }
  return out;
}

GuidanceBundle make_guidance(const Volume& volume, int z, const GuidanceConfig& cfg);

}  // namespace c2f
