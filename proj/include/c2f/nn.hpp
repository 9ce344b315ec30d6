#pragma once

// Parameter storage and the layer building blocks shared by the coarse
// predictor and the denoiser.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "c2f/autograd.hpp"
#include "c2f/random.hpp"

namespace c2f::nn {

using ag::Shape;
using ag::Tape;
using ag::Var;

/// Named flat list of parameter matrices. Layers refer to entries by index.
template <class S>
class ParamSet {
 public:
  int add(std::string name, Mat<S> value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size() - 1);
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  const std::vector<std::string>& names() const { return names_; }
  Mat<S>& value(int i) { return values_[static_cast<std::size_t>(i)]; }
  const Mat<S>& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  std::vector<Mat<S>>& values() { return values_; }
  const std::vector<Mat<S>>& values() const { return values_; }

  Eigen::Index count() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }
  /// Scalar count of the parameters whose name starts with prefix.
  Eigen::Index count(const std::string& prefix) const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (names_[i].rfind(prefix, 0) == 0) n += values_[i].size();
    }
    return n;
  }

  std::vector<Mat<S>> zeros_like() const {
    std::vector<Mat<S>> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.push_back(Mat<S>::Zero(v.rows(), v.cols()));
    return g;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
};

template <class S>
using Grads = std::vector<Mat<S>>;

/// Places parameters on a tape on first use (as trainable leaves or as
/// constants) and gathers their gradients after backward.
template <class S>
class Binder {
 public:
  Binder(Tape<S>& tape, const ParamSet<S>& params, bool trainable)
      : tape_(tape), params_(params), trainable_(trainable), ids_(static_cast<std::size_t>(params.size()), -1) {}

  Var<S> operator()(int pid) {
    int& id = ids_[static_cast<std::size_t>(pid)];
    if (id < 0) {
      const Mat<S>& v = params_.value(pid);
      const Shape sh{static_cast<int>(v.rows()), 1, static_cast<int>(v.cols())};
      id = (trainable_ ? tape_.variable(sh, v) : tape_.constant(sh, v)).id;
    }
    return Var<S>{&tape_, id};
  }

  Tape<S>& tape() { return tape_; }
  bool trainable() const { return trainable_; }

  /// grads[i] += d(root)/d(param i) for every parameter touched by the pass.
  void accumulate(Grads<S>& grads) const {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] >= 0 && tape_.has_grad(ids_[i])) grads[i] += tape_.node(ids_[i]).grad;
    }
  }

 private:
  Tape<S>& tape_;
  const ParamSet<S>& params_;
  bool trainable_;
  std::vector<int> ids_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in double so that float and
/// double models built from the same seed agree up to rounding.
template <class S>
Mat<S> uniform_init(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return m;
}

/// Largest group count <= 8 that divides C and leaves at least two channels per group.
inline int choose_groups(int channels) {
  if (channels < 2) return 1;
  for (int g = std::min(8, channels / 2); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

template <class S>
struct Conv2d {
  int weight = -1;
  int bias = -1;
  int cin = 0;
  int cout = 0;
  int k = 1;

  static Conv2d create(ParamSet<S>& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                       bool zero_init = false, bool with_bias = true) {
    Conv2d c;
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    const double fan_in = static_cast<double>(cin) * k * k;
    c.weight = ps.add(name + ".weight", zero_init ? Mat<S>::Zero(cout, cin * k * k)
                                                  : uniform_init<S>(cout, cin * k * k, fan_in, rng));
    if (with_bias) {
      c.bias = ps.add(name + ".bias", zero_init ? Mat<S>::Zero(cout, 1) : uniform_init<S>(cout, 1, fan_in, rng));
    }
    return c;
  }

  Var<S> operator()(Binder<S>& b, Var<S> x) const {
    return ag::conv2d(x, b(weight), bias >= 0 ? b(bias) : Var<S>{}, k);
  }

  long long macs(int h, int w) const { return static_cast<long long>(cout) * cin * k * k * h * w; }
};

template <class S>
struct GroupNorm {
  int gamma = -1;
  int beta = -1;
  int groups = 1;

  static GroupNorm create(ParamSet<S>& ps, const std::string& name, int channels) {
    GroupNorm n;
    n.groups = choose_groups(channels);
    n.gamma = ps.add(name + ".gamma", Mat<S>::Ones(channels, 1));
    n.beta = ps.add(name + ".beta", Mat<S>::Zero(channels, 1));
    return n;
  }

  Var<S> operator()(Binder<S>& b, Var<S> x) const { return ag::group_norm(x, b(gamma), b(beta), groups); }
};

/// Sinusoidal features of sqrt(gamma), as a [dim,1,1] vector. The 5000 scale
/// spreads the unit interval over the frequency range.
template <class S>
Mat<S> noise_level_embedding(double gamma, int dim) {
  const int half = dim / 2;
  const double level = 5000.0 * std::sqrt(gamma);
  Mat<S> e = Mat<S>::Zero(dim, 1);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
    e(i, 0) = static_cast<S>(std::sin(level * freq));
    e(half + i, 0) = static_cast<S>(std::cos(level * freq));
  }
  return e;
}

/// Residual block: norm-act-conv, optional additive guidance after the first
/// convolution, norm with optional noise-level affine modulation, act-conv,
/// plus a 1x1 skip when the width changes.
template <class S>
struct ResBlock {
  int cin = 0;
  int cout = 0;
  GroupNorm<S> norm1, norm2;
  Conv2d<S> conv1, conv2;
  std::optional<Conv2d<S>> skip;
  std::optional<Conv2d<S>> guide;  // 1x1, no bias: zero guidance adds exactly nothing
  std::optional<Conv2d<S>> film;   // embedding -> (scale, shift)

  static ResBlock create(ParamSet<S>& ps, const std::string& name, int cin, int cout, int guide_channels,
                         int emb_dim, Rng& rng) {
    ResBlock r;
    r.cin = cin;
    r.cout = cout;
    r.norm1 = GroupNorm<S>::create(ps, name + ".norm1", cin);
    r.conv1 = Conv2d<S>::create(ps, name + ".conv1", cin, cout, 3, rng);
    if (guide_channels > 0) r.guide = Conv2d<S>::create(ps, name + ".guide", guide_channels, cout, 1, rng, false, false);
    r.norm2 = GroupNorm<S>::create(ps, name + ".norm2", cout);
    if (emb_dim > 0) r.film = Conv2d<S>::create(ps, name + ".film", emb_dim, 2 * cout, 1, rng);
    r.conv2 = Conv2d<S>::create(ps, name + ".conv2", cout, cout, 3, rng);
    if (cin != cout) r.skip = Conv2d<S>::create(ps, name + ".skip", cin, cout, 1, rng);
    return r;
  }

  /// emb: activated embedding vector or invalid; guide_in: feature map or invalid.
  Var<S> operator()(Binder<S>& b, Var<S> x, Var<S> emb, Var<S> guide_in) const {
    Var<S> h = conv1(b, ag::silu(norm1(b, x)));
    if (guide && guide_in.valid()) h = ag::add(h, (*guide)(b, guide_in));
    h = norm2(b, h);
    if (film && emb.valid()) {
      Var<S> ss = (*film)(b, emb);
      Var<S> scale = ag::affine(ag::slice_channels(ss, 0, cout), S(1), S(1));
      Var<S> shift = ag::slice_channels(ss, cout, cout);
      h = ag::add_channel(ag::mul_channel(h, scale), shift);
    }
    h = conv2(b, ag::silu(h));
    return ag::add(h, skip ? (*skip)(b, x) : x);
  }

  long long macs(int h, int w) const {
    long long m = conv1.macs(h, w) + conv2.macs(h, w);
    if (skip) m += skip->macs(h, w);
    if (guide) m += guide->macs(h, w);
    if (film) m += film->macs(1, 1);
    return m;
  }
};

/// Single-head self-attention over pixels with a residual connection.
template <class S>
struct Attention {
  int channels = 0;
  GroupNorm<S> norm;
  Conv2d<S> q, k, v, out;

  static Attention create(ParamSet<S>& ps, const std::string& name, int channels, Rng& rng) {
    Attention a;
    a.channels = channels;
    a.norm = GroupNorm<S>::create(ps, name + ".norm", channels);
    a.q = Conv2d<S>::create(ps, name + ".q", channels, channels, 1, rng);
    a.k = Conv2d<S>::create(ps, name + ".k", channels, channels, 1, rng);
    a.v = Conv2d<S>::create(ps, name + ".v", channels, channels, 1, rng);
    a.out = Conv2d<S>::create(ps, name + ".out", channels, channels, 1, rng);
    return a;
  }

  Var<S> operator()(Binder<S>& b, Var<S> x) const {
    const Shape sh = x.shape();
    Var<S> hn = norm(b, x);
    Var<S> qv = q(b, hn), kv = k(b, hn), vv = v(b, hn);
    Var<S> scores = ag::scale(ag::matmul(qv, kv, true, false), S(1) / std::sqrt(S(channels)));
    Var<S> attn = ag::softmax_rows(scores);
    Var<S> mixed = ag::reshape(ag::matmul(vv, attn, false, true), sh);
    return ag::add(x, out(b, mixed));
  }

  long long macs(int h, int w) const {
    const long long n = static_cast<long long>(h) * w;
    return q.macs(h, w) * 4 + 2 * n * n * channels;
  }
};

}  // namespace c2f::nn
