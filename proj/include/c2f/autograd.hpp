#pragma once

// Minimal reverse-mode differentiation over channel-major image tensors.
//
// A Tape records every operation of one forward pass together with a closure
// that pushes the output gradient back to its inputs. Values are Eigen
// row-major matrices: an image [C, H, W] is a C x (H*W) matrix, a vector of
// length n is n x 1. Templating on the scalar lets the same network code run
// in float for training and in double for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "c2f/errors.hpp"
#include "c2f/tensor.hpp"

namespace c2f::ag {

struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;
  int pixels() const { return h * w; }
  bool operator==(const Shape&) const = default;
};

template <class S>
class Tape;

/// Handle to a node on a tape.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<S>& value() const { return tape->node(id).value; }
  Shape shape() const { return tape->node(id).shape; }
  bool requires_grad() const { return tape->node(id).requires_grad; }
  S item() const { return value()(0, 0); }
  Tensor<S> tensor() const {
    const Shape s = shape();
    return Tensor<S>(s.c, s.h, s.w, value());
  }
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  struct Node {
    Shape shape;
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Shape shape, Mat<S> value) { return push(shape, std::move(value), false, {}); }
  Var<S> constant(const Tensor<S>& t) { return constant({t.channels, t.height, t.width}, t.data); }
  Var<S> variable(Shape shape, Mat<S> value) { return push(shape, std::move(value), true, {}); }

  /// Record an op; the result needs a gradient when any input does.
  Var<S> record(Shape shape, Mat<S> value, std::initializer_list<Var<S>> inputs, Backward backward) {
    bool rg = false;
    for (const auto& v : inputs) rg = rg || node(v.id).requires_grad;
    return push(shape, std::move(value), rg, rg ? std::move(backward) : Backward{});
  }
  Var<S> record(Shape shape, Mat<S> value, const std::vector<Var<S>>& inputs, Backward backward) {
    bool rg = false;
    for (const auto& v : inputs) rg = rg || node(v.id).requires_grad;
    return push(shape, std::move(value), rg, rg ? std::move(backward) : Backward{});
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Mat<S>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  /// Backpropagate from a scalar root. Leaf gradients stay on the tape.
  void backward(Var<S> root) {
    if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad(root.id).setConstant(S(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
      n.grad.resize(0, 0);  // interior gradients are not needed afterwards
    }
  }

 private:
  Var<S> push(Shape shape, Mat<S> value, bool rg, Backward backward) {
    if (value.rows() != shape.c || value.cols() != static_cast<Eigen::Index>(shape.pixels())) {
      throw ShapeError("tape: value storage does not match node shape");
    }
    nodes_.push_back(Node{shape, std::move(value), Mat<S>(), rg, std::move(backward)});
    return Var<S>{this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

namespace detail {
template <class S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    const Shape sa = a.shape(), sb = b.shape();
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(sa.c, sa.h, sa.w) + " vs " +
                     shape_string(sb.c, sb.h, sb.w));
  }
}
template <class S>
void accumulate(Tape<S>& t, int id, const Mat<S>& g) {
  if (t.needs_grad(id)) t.grad(id) += g;
}
}  // namespace detail

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "add");
  return a.tape->record(a.shape(), a.value() + b.value(), {a, b}, [a = a.id, b = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.node(self).grad;
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "sub");
  return a.tape->record(a.shape(), a.value() - b.value(), {a, b}, [a = a.id, b = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.node(self).grad;
    detail::accumulate(t, a, g);
    if (t.needs_grad(b)) t.grad(b) -= g;
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "mul");
  Mat<S> v = a.value().cwiseProduct(b.value());
  return a.tape->record(a.shape(), std::move(v), {a, b}, [a = a.id, b = b.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.node(self).grad;
    if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.node(b).value);
    if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.node(a).value);
  });
}

/// s * a + offset
template <class S>
Var<S> affine(Var<S> a, S s, S offset = S(0)) {
  Mat<S> v = (s * a.value()).array() + offset;
  return a.tape->record(a.shape(), std::move(v), {a}, [a = a.id, s](Tape<S>& t, int self) {
    if (t.needs_grad(a)) t.grad(a) += s * t.node(self).grad;
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  return affine(a, s, S(0));
}

/// x + v broadcast over pixels; v is a [C,1,1] vector.
template <class S>
Var<S> add_channel(Var<S> x, Var<S> v) {
  if (v.value().rows() != x.value().rows() || v.value().cols() != 1) throw ShapeError("add_channel: bad vector shape");
  Mat<S> out = x.value();
  out.colwise() += v.value().col(0);
  return x.tape->record(x.shape(), std::move(out), {x, v}, [x = x.id, v = v.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.node(self).grad;
    detail::accumulate(t, x, g);
    if (t.needs_grad(v)) t.grad(v) += g.rowwise().sum();
  });
}

/// x * v broadcast over pixels; v is a [C,1,1] vector.
template <class S>
Var<S> mul_channel(Var<S> x, Var<S> v) {
  if (v.value().rows() != x.value().rows() || v.value().cols() != 1) throw ShapeError("mul_channel: bad vector shape");
  Mat<S> out = x.value().array().colwise() * v.value().col(0).array();
  return x.tape->record(x.shape(), std::move(out), {x, v}, [x = x.id, v = v.id](Tape<S>& t, int self) {
    const Mat<S>& g = t.node(self).grad;
    if (t.needs_grad(x)) t.grad(x).array() += g.array().colwise() * t.node(v).value.col(0).array();
    if (t.needs_grad(v)) t.grad(v) += g.cwiseProduct(t.node(x).value).rowwise().sum();
  });
}

template <class S>
Var<S> silu(Var<S> x) {
  const Mat<S>& xv = x.value();
  Mat<S> sig = (S(1) + (-xv.array()).exp()).inverse().matrix();
  Mat<S> out = xv.cwiseProduct(sig);
  return x.tape->record(x.shape(), std::move(out), {x},
                        [x = x.id, sig = std::move(sig)](Tape<S>& t, int self) {
                          if (!t.needs_grad(x)) return;
                          const Mat<S>& g = t.node(self).grad;
                          const auto& xv = t.node(x).value.array();
                          t.grad(x).array() += g.array() * sig.array() * (S(1) + xv * (S(1) - sig.array()));
                        });
}

/// Group normalization over (channels-in-group x pixels) with per-channel
/// affine parameters gamma, beta of shape [C,1,1].
template <class S>
Var<S> group_norm(Var<S> x, Var<S> gamma, Var<S> beta, int groups, S eps = S(1e-5)) {
  const Shape sh = x.shape();
  if (groups < 1 || sh.c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  const int cg = sh.c / groups;
  const Eigen::Index n = static_cast<Eigen::Index>(cg) * sh.pixels();
  const Mat<S>& xv = x.value();
  auto xhat = std::make_shared<Mat<S>>(xv.rows(), xv.cols());
  auto inv_std = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(groups);
  for (int g = 0; g < groups; ++g) {
    auto blk = xv.middleRows(g * cg, cg);
    const S mean = blk.sum() / S(n);
    const S var = (blk.array() - mean).square().sum() / S(n);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    xhat->middleRows(g * cg, cg) = ((blk.array() - mean) * is).matrix();
  }
  Mat<S> out = xhat->array().colwise() * gamma.value().col(0).array();
  out.colwise() += beta.value().col(0);
  return x.tape->record(
      sh, std::move(out), {x, gamma, beta},
      [x = x.id, gm = gamma.id, bt = beta.id, xhat, inv_std, groups, cg, n](Tape<S>& t, int self) {
        const Mat<S>& g = t.node(self).grad;
        if (t.needs_grad(bt)) t.grad(bt) += g.rowwise().sum();
        if (t.needs_grad(gm)) t.grad(gm) += g.cwiseProduct(*xhat).rowwise().sum();
        if (!t.needs_grad(x)) return;
        Mat<S> dxhat = g.array().colwise() * t.node(gm).value.col(0).array();
        Mat<S>& gx = t.grad(x);
        for (int k = 0; k < groups; ++k) {
          auto d = dxhat.middleRows(k * cg, cg).array();
          auto xh = xhat->middleRows(k * cg, cg).array();
          const S mean_d = d.sum() / S(n);
          const S mean_dx = (d * xh).sum() / S(n);
          gx.middleRows(k * cg, cg).array() += (*inv_std)[k] * (d - mean_d - xh * mean_dx);
        }
      });
}

namespace detail {

/// Unfold k x k neighborhoods (zero padded, stride 1) into a (C*k*k) x (H*W) matrix.
template <class S>
Mat<S> im2col(const Mat<S>& x, int c, int h, int w, int k) {
  const int pad = k / 2;
  Mat<S> col = Mat<S>::Zero(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    const S* src = x.row(ci).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* dst = col.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int ys = y + ky - pad;
          if (ys < 0 || ys >= h || x1 <= x0) continue;
          const S* s = src + static_cast<std::ptrdiff_t>(ys) * w + dx;
          S* d = dst + static_cast<std::ptrdiff_t>(y) * w;
          for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
        }
      }
    }
  }
  return col;
}

template <class S>
void col2im_add(const Mat<S>& col, Mat<S>& gx, int c, int h, int w, int k) {
  const int pad = k / 2;
  for (int ci = 0; ci < c; ++ci) {
    S* dst = gx.row(ci).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* src = col.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int ys = y + ky - pad;
          if (ys < 0 || ys >= h || x1 <= x0) continue;
          S* d = dst + static_cast<std::ptrdiff_t>(ys) * w + dx;
          const S* s = src + static_cast<std::ptrdiff_t>(y) * w;
          for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
        }
      }
    }
  }
}

}  // namespace detail

/// Same-padded stride-1 convolution. weight is Cout x (Cin*k*k); bias is an
/// optional Cout x 1 vector (pass a default Var for none).
template <class S>
Var<S> conv2d(Var<S> x, Var<S> weight, Var<S> bias, int k) {
  const Shape sh = x.shape();
  const Eigen::Index cout = weight.value().rows();
  if (weight.value().cols() != static_cast<Eigen::Index>(sh.c) * k * k) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.value().cols() / (k * k)) +
                     " input channels, got " + std::to_string(sh.c));
  }
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().rows() != cout) throw ShapeError("conv2d: bias size mismatch");
  Mat<S> out(cout, sh.pixels());
  if (k == 1) {
    out.noalias() = weight.value() * x.value();
  } else {
    out.noalias() = weight.value() * detail::im2col(x.value(), sh.c, sh.h, sh.w, k);
  }
  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) {
    out.colwise() += bias.value().col(0);
    inputs.push_back(bias);
  }
  return x.tape->record(
      Shape{static_cast<int>(cout), sh.h, sh.w}, std::move(out), inputs,
      [x = x.id, wt = weight.id, b = has_bias ? bias.id : -1, sh, k](Tape<S>& t, int self) {
        const Mat<S>& g = t.node(self).grad;
        if (b >= 0 && t.needs_grad(b)) t.grad(b) += g.rowwise().sum();
        if (k == 1) {
          if (t.needs_grad(wt)) t.grad(wt).noalias() += g * t.node(x).value.transpose();
          if (t.needs_grad(x)) t.grad(x).noalias() += t.node(wt).value.transpose() * g;
          return;
        }
        if (t.needs_grad(wt)) {
          Mat<S> col = detail::im2col(t.node(x).value, sh.c, sh.h, sh.w, k);
          t.grad(wt).noalias() += g * col.transpose();
        }
        if (t.needs_grad(x)) {
          Mat<S> dcol = t.node(wt).value.transpose() * g;
          detail::col2im_add(dcol, t.grad(x), sh.c, sh.h, sh.w, k);
        }
      });
}

template <class S>
Var<S> avg_pool2(Var<S> x) {
  const Shape sh = x.shape();
  if (sh.h % 2 || sh.w % 2) throw ShapeError("avg_pool2: odd spatial size");
  const int h = sh.h / 2, w = sh.w / 2;
  const Tensor<S> pooled = c2f::avg_pool2(x.tensor());
  return x.tape->record(Shape{sh.c, h, w}, pooled.data, {x}, [x = x.id, sh, h, w](Tape<S>& t, int self) {
    if (!t.needs_grad(x)) return;
    const Mat<S>& g = t.node(self).grad;
    Mat<S>& gx = t.grad(x);
    for (int c = 0; c < sh.c; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          const S v = S(0.25) * g(c, y * w + xx);
          gx(c, (2 * y) * sh.w + 2 * xx) += v;
          gx(c, (2 * y) * sh.w + 2 * xx + 1) += v;
          gx(c, (2 * y + 1) * sh.w + 2 * xx) += v;
          gx(c, (2 * y + 1) * sh.w + 2 * xx + 1) += v;
        }
      }
    }
  });
}

/// Nearest-neighbor 2x upsampling.
template <class S>
Var<S> upsample2(Var<S> x) {
  const Shape sh = x.shape();
  const int h = sh.h * 2, w = sh.w * 2;
  const Mat<S>& xv = x.value();
  Mat<S> out(sh.c, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < sh.c; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) out(c, y * w + xx) = xv(c, (y / 2) * sh.w + xx / 2);
    }
  }
  return x.tape->record(Shape{sh.c, h, w}, std::move(out), {x}, [x = x.id, sh, h, w](Tape<S>& t, int self) {
    if (!t.needs_grad(x)) return;
    const Mat<S>& g = t.node(self).grad;
    Mat<S>& gx = t.grad(x);
    for (int c = 0; c < sh.c; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) gx(c, (y / 2) * sh.w + xx / 2) += g(c, y * w + xx);
      }
    }
  });
}

/// Channel concatenation.
template <class S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape s0 = parts[0].shape();
  int c = 0;
  for (const auto& p : parts) {
    if (p.shape().h != s0.h || p.shape().w != s0.w) throw ShapeError("concat: spatial mismatch");
    c += p.shape().c;
  }
  Mat<S> out(c, s0.pixels());
  std::vector<int> ids, offsets;
  int row = 0;
  for (const auto& p : parts) {
    out.middleRows(row, p.shape().c) = p.value();
    ids.push_back(p.id);
    offsets.push_back(row);
    row += p.shape().c;
  }
  return parts[0].tape->record(Shape{c, s0.h, s0.w}, std::move(out), parts,
                               [ids, offsets](Tape<S>& t, int self) {
                                 const Mat<S>& g = t.node(self).grad;
                                 for (std::size_t i = 0; i < ids.size(); ++i) {
                                   if (!t.needs_grad(ids[i])) continue;
                                   t.grad(ids[i]) += g.middleRows(offsets[i], t.node(ids[i]).value.rows());
                                 }
                               });
}

template <class S>
Var<S> slice_channels(Var<S> x, int begin, int count) {
  const Shape sh = x.shape();
  if (begin < 0 || count < 1 || begin + count > sh.c) throw ShapeError("slice_channels: range out of bounds");
  return x.tape->record(Shape{count, sh.h, sh.w}, x.value().middleRows(begin, count), {x},
                        [x = x.id, begin, count](Tape<S>& t, int self) {
                          if (t.needs_grad(x)) t.grad(x).middleRows(begin, count) += t.node(self).grad;
                        });
}

/// Reinterpret the spatial layout; storage is unchanged.
template <class S>
Var<S> reshape(Var<S> x, Shape shape) {
  if (shape.c != x.shape().c || shape.pixels() != x.shape().pixels()) throw ShapeError("reshape: size mismatch");
  return x.tape->record(shape, x.value(), {x}, [x = x.id](Tape<S>& t, int self) {
    if (t.needs_grad(x)) t.grad(x) += t.node(self).grad;
  });
}

/// op(a) * op(b) on the raw storage matrices. The result is a [rows,1,cols] node.
template <class S>
Var<S> matmul(Var<S> a, Var<S> b, bool trans_a = false, bool trans_b = false) {
  const Mat<S>& av = a.value();
  const Mat<S>& bv = b.value();
  const Eigen::Index inner_a = trans_a ? av.rows() : av.cols();
  const Eigen::Index inner_b = trans_b ? bv.cols() : bv.rows();
  if (inner_a != inner_b) throw ShapeError("matmul: inner dimension mismatch");
  Mat<S> out;
  if (trans_a && trans_b) out.noalias() = av.transpose() * bv.transpose();
  else if (trans_a) out.noalias() = av.transpose() * bv;
  else if (trans_b) out.noalias() = av * bv.transpose();
  else out.noalias() = av * bv;
  const Shape sh{static_cast<int>(out.rows()), 1, static_cast<int>(out.cols())};
  return a.tape->record(sh, std::move(out), {a, b}, [a = a.id, b = b.id, trans_a, trans_b](Tape<S>& t, int self) {
    const Mat<S>& g = t.node(self).grad;
    const Mat<S>& av = t.node(a).value;
    const Mat<S>& bv = t.node(b).value;
    // C = A' B' with A' = op(A), B' = op(B): dA' = G B'^T, dB' = A'^T G.
    if (t.needs_grad(a)) {
      if (!trans_a && !trans_b) t.grad(a).noalias() += g * bv.transpose();
      else if (!trans_a && trans_b) t.grad(a).noalias() += g * bv;
      else if (trans_a && !trans_b) t.grad(a).noalias() += bv * g.transpose();
      else t.grad(a).noalias() += bv.transpose() * g.transpose();
    }
    if (t.needs_grad(b)) {
      if (!trans_a && !trans_b) t.grad(b).noalias() += av.transpose() * g;
      else if (trans_a && !trans_b) t.grad(b).noalias() += av * g;
      else if (!trans_a && trans_b) t.grad(b).noalias() += g.transpose() * av;
      else t.grad(b).noalias() += g.transpose() * av.transpose();
    }
  });
}

/// Row-wise softmax of a 2-D node.
template <class S>
Var<S> softmax_rows(Var<S> x) {
  const Mat<S>& xv = x.value();
  Mat<S> y(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const S mx = xv.row(r).maxCoeff();
    y.row(r) = (xv.row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return x.tape->record(x.shape(), y, {x}, [x = x.id](Tape<S>& t, int self) {
    if (!t.needs_grad(x)) return;
    const Mat<S>& g = t.node(self).grad;
    const Mat<S>& y = t.node(self).value;
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(x).array() += y.array() * (g.array().colwise() - dot.array());
  });
}

/// Mean absolute difference, a scalar node.
template <class S>
Var<S> l1_mean(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "l1_mean");
  const S n = static_cast<S>(a.value().size());
  Mat<S> v(1, 1);
  v(0, 0) = (a.value() - b.value()).cwiseAbs().sum() / n;
  return a.tape->record(Shape{1, 1, 1}, std::move(v), {a, b}, [a = a.id, b = b.id, n](Tape<S>& t, int self) {
    const S g = t.node(self).grad(0, 0) / n;
    Mat<S> sgn = (t.node(a).value - t.node(b).value).array().sign().matrix();
    if (t.needs_grad(a)) t.grad(a) += g * sgn;
    if (t.needs_grad(b)) t.grad(b) -= g * sgn;
  });
}

/// Mean squared difference, a scalar node.
template <class S>
Var<S> mse_mean(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "mse_mean");
  const S n = static_cast<S>(a.value().size());
  Mat<S> v(1, 1);
  v(0, 0) = (a.value() - b.value()).squaredNorm() / n;
  return a.tape->record(Shape{1, 1, 1}, std::move(v), {a, b}, [a = a.id, b = b.id, n](Tape<S>& t, int self) {
    const S g = S(2) * t.node(self).grad(0, 0) / n;
    Mat<S> d = t.node(a).value - t.node(b).value;
    if (t.needs_grad(a)) t.grad(a) += g * d;
    if (t.needs_grad(b)) t.grad(b) -= g * d;
  });
}

template <class S>
Var<S> scalar(Tape<S>& tape, S v) {
  Mat<S> m(1, 1);
  m(0, 0) = v;
  return tape.constant(Shape{1, 1, 1}, std::move(m));
}

}  // namespace c2f::ag
