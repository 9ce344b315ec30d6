#include "c2f/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <unsupported/Eigen/FFT>

namespace c2f {

void GuidanceConfig::validate() const {
  if (n_neighbors <= 0 || n_neighbors % 2 != 0) {
    throw ParameterError("guidance.n_neighbors must be a positive even integer, got " + std::to_string(n_neighbors));
  }
  if (pyramid_levels < 1) throw ParameterError("guidance.pyramid_levels must be >= 1");
}

Tensor<float> neighboring_slices(const Volume& volume, int z, int n_neighbors) {
  if (volume.empty()) throw DataError("neighboring_slices: empty volume");
  if (n_neighbors <= 0 || n_neighbors % 2 != 0) {
    throw ParameterError("neighboring_slices: n_neighbors must be a positive even integer");
  }
  if (z < 0 || z >= volume.depth) throw ParameterError("neighboring_slices: slice index out of range");
  Tensor<float> out(n_neighbors, volume.height, volume.width);
  const int half = n_neighbors / 2;
  int row = 0;
  for (int off = -half; off <= half; ++off) {
    if (off == 0) continue;
    const int src = std::clamp(z + off, 0, volume.depth - 1);
    out.data.row(row++) = Eigen::Map<const Eigen::RowVectorXf>(volume.slice(src).data(), volume.slice(src).size());
  }
  return out;
}

Tensor<float> spectrum(const Eigen::Ref<const Mat<float>>& slice) {
  const int h = static_cast<int>(slice.rows());
  const int w = static_cast<int>(slice.cols());
  if (h < 1 || w < 1) throw ShapeError("spectrum: empty slice");
  if (!slice.allFinite()) throw DataError("spectrum: non-finite input");

  using Cx = std::complex<double>;
  Eigen::FFT<double> fft;
  Eigen::Matrix<Cx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(h, w);
  std::vector<Cx> in, out;
  for (int y = 0; y < h; ++y) {
    in.assign(w, Cx());
    for (int x = 0; x < w; ++x) in[x] = Cx(slice(y, x), 0.0);
    fft.fwd(out, in);
    for (int x = 0; x < w; ++x) f(y, x) = out[x];
  }
  for (int x = 0; x < w; ++x) {
    in.resize(h);
    for (int y = 0; y < h; ++y) in[y] = f(y, x);
    fft.fwd(out, in);
    for (int y = 0; y < h; ++y) f(y, x) = out[y];
  }

  Eigen::MatrixXd mag(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) mag((y + h / 2) % h, (x + w / 2) % w) = std::log1p(std::abs(f(y, x)));
  }
  const double peak = mag.maxCoeff();
  Tensor<float> result(1, h, w);
  if (peak > 0.0) result.plane(0) = (mag / peak).cast<float>();
  return result;
}

GuidanceBundle make_guidance(const Volume& volume, int z, const GuidanceConfig& cfg) {
  cfg.validate();
  if (volume.empty()) throw DataError("make_guidance: empty volume");
  if (z < 0 || z >= volume.depth) throw ParameterError("make_guidance: slice index out of range");
  GuidanceBundle b;
  b.nas = neighboring_slices(volume, z, cfg.n_neighbors);
  b.spectrum = spectrum(volume.slice(z));
  b.nas_pyramid = build_pyramid(b.nas, cfg.pyramid_levels);
  b.spectrum_pyramid = build_pyramid(b.spectrum, cfg.pyramid_levels);
  return b;
}

}  // namespace c2f
