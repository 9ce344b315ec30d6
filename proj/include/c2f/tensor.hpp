#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "c2f/errors.hpp"

namespace c2f {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using PlaneMap = Eigen::Map<Mat<S>>;
template <class S>
using ConstPlaneMap = Eigen::Map<const Mat<S>>;

/// Channel-major image stack [C, H, W]. Stored as a C x (H*W) row-major
/// matrix so that convolutions reduce to a single GEMM per layer.
template <class S>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Mat<S> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(Mat<S>::Zero(c, h * w)) {}
  Tensor(int c, int h, int w, Mat<S> values) : channels(c), height(h), width(w), data(std::move(values)) {
    if (data.rows() != c || data.cols() != static_cast<Eigen::Index>(h) * w) {
      throw ShapeError("tensor storage does not match shape");
    }
  }

  static Tensor zeros(int c, int h, int w) { return Tensor(c, h, w); }
  static Tensor constant(int c, int h, int w, S v) {
    Tensor t(c, h, w);
    t.data.setConstant(v);
    return t;
  }

  int pixels() const { return height * width; }
  Eigen::Index size() const { return data.size(); }

  PlaneMap<S> plane(int c) { return PlaneMap<S>(data.row(c).data(), height, width); }
  ConstPlaneMap<S> plane(int c) const { return ConstPlaneMap<S>(data.row(c).data(), height, width); }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>(channels, height, width, data.template cast<T>());
  }
};

inline std::string shape_string(int c, int h, int w) {
  return "[" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

template <class S>
std::string shape_string(const Tensor<S>& t) {
  return shape_string(t.channels, t.height, t.width);
}

/// Concatenate along channels; all inputs share H and W.
template <class S>
Tensor<S> concat_channels(const std::vector<const Tensor<S>*>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  int c = 0;
  for (const auto* p : parts) {
    if (p->height != parts[0]->height || p->width != parts[0]->width) {
      throw ShapeError("concat: spatial mismatch " + shape_string(*p) + " vs " + shape_string(*parts[0]));
    }
    c += p->channels;
  }
  Tensor<S> out(c, parts[0]->height, parts[0]->width);
  int row = 0;
  for (const auto* p : parts) {
    out.data.middleRows(row, p->channels) = p->data;
    row += p->channels;
  }
  return out;
}

/// 2x2 average pooling.
template <class S>
Tensor<S> avg_pool2(const Tensor<S>& x) {
  if (x.height % 2 != 0 || x.width % 2 != 0) {
    throw ShapeError("avg_pool2: spatial size " + shape_string(x) + " is not divisible by 2");
  }
  const int h = x.height / 2, w = x.width / 2;
  Tensor<S> out(x.channels, h, w);
  for (int c = 0; c < x.channels; ++c) {
    auto src = x.plane(c);
    auto dst = out.plane(c);
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        dst(y, xx) = S(0.25) * (src(2 * y, 2 * xx) + src(2 * y, 2 * xx + 1) + src(2 * y + 1, 2 * xx) +
                                src(2 * y + 1, 2 * xx + 1));
      }
    }
  }
  return out;
}

/// Scalar volume [D, H, W], z-major (slice-contiguous) float storage.
struct Volume {
  int depth = 0;
  int height = 0;
  int width = 0;
  Eigen::ArrayXf voxels;

  Volume() = default;
  Volume(int d, int h, int w) : depth(d), height(h), width(w), voxels(Eigen::ArrayXf::Zero(Eigen::Index(d) * h * w)) {}

  Eigen::Index size() const { return voxels.size(); }
  bool empty() const { return voxels.size() == 0; }
  bool same_shape(const Volume& o) const { return depth == o.depth && height == o.height && width == o.width; }

  float& at(int z, int y, int x) { return voxels[(Eigen::Index(z) * height + y) * width + x]; }
  float at(int z, int y, int x) const { return voxels[(Eigen::Index(z) * height + y) * width + x]; }

  PlaneMap<float> slice(int z) { return PlaneMap<float>(voxels.data() + Eigen::Index(z) * height * width, height, width); }
  ConstPlaneMap<float> slice(int z) const {
    return ConstPlaneMap<float>(voxels.data() + Eigen::Index(z) * height * width, height, width);
  }

  /// Slice z as a one-channel tensor.
  template <class S>
  Tensor<S> slice_tensor(int z) const {
    Tensor<S> t(1, height, width);
    t.data.row(0) = Eigen::Map<const Eigen::RowVectorXf>(voxels.data() + Eigen::Index(z) * height * width,
                                                          Eigen::Index(height) * width)
                        .template cast<S>();
    return t;
  }
};

}  // namespace c2f
