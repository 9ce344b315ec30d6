#pragma once

// The per-slice training objective: coarse prediction, noised residual,
// noise prediction, guidance reconstruction and the one-step contrastive
// term, assembled on one tape.

#include <cmath>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/losses.hpp"
#include "c2f/networks.hpp"

namespace c2f {

/// Network-ready tensors for one training slice, all in the normalized range.
template <class S>
struct TrainingExample {
  Tensor<S> condition;               // [1 + aux, H, W]
  std::vector<Tensor<S>> pyramid;    // x_aux^k
  Tensor<S> target;                  // y, [1, H, W]
  std::vector<Tensor<S>> nas_target; // y_aux^k, NAS part
  std::vector<Tensor<S>> spectrum_target;
  std::vector<Tensor<S>> negatives;  // [1, H, W]
};

template <class S>
TrainingExample<S> make_example(const SliceSample& s, const NegativeSet& negs, const GuidanceConfig& cfg) {
  TrainingExample<S> ex;
  const ConditionInput c = make_condition(s.lpet, s.guidance, cfg);
  ex.condition = c.channels.template cast<S>();
  for (const auto& p : c.pyramid) ex.pyramid.push_back(p.template cast<S>());
  const AffineMap m = signed_range_map();
  ex.target = s.spet.template cast<S>();
  ex.target.data.array() = m.apply(ex.target.data.array());
  const GuidanceTargets t = make_guidance_targets(s.guidance_target, cfg);
  for (const auto& p : t.nas) ex.nas_target.push_back(p.template cast<S>());
  for (const auto& p : t.spectrum) ex.spectrum_target.push_back(p.template cast<S>());
  for (const auto& n : negs.slices) {
    Tensor<S> v = n.template cast<S>();
    v.data.array() = m.apply(v.data.array());
    ex.negatives.push_back(std::move(v));
  }
  return ex;
}

struct ObjectiveOptions {
  LossWeights weights;
  bool detach_residual = false;
};

template <class S>
struct ObjectiveResult {
  LossParts<S> parts;
  ag::Var<S> total;
};

template <class S>
ag::Var<S> constant_of(ag::Tape<S>& tape, const Tensor<S>& t) {
  return tape.constant(ag::Shape{t.channels, t.height, t.width}, t.data);
}

/// Builds every loss term of one slice on b's tape. Without the refinement
/// module the coarse predictor is fit directly with a squared error.
template <class S>
ObjectiveResult<S> evaluate_objective(nn::Binder<S>& b, const Networks<S>& nets, const TrainingExample<S>& ex,
                                      double gamma, const Mat<S>& eps, const ObjectiveOptions& opt) {
  ag::Tape<S>& tape = b.tape();
  const ModelConfig& cfg = nets.config();
  ObjectiveResult<S> r;
  const ag::Var<S> cond = constant_of(tape, ex.condition);
  const ag::Var<S> y = constant_of(tape, ex.target);
  const ag::Var<S> x_cp = nets.cpm_forward(b, cond);

  if (!nets.has_irm()) {
    r.parts.main = ag::mse_mean(x_cp, y);
    r.total = loss_total(r.parts, opt.weights);
    return r;
  }

  const ag::Shape sh = y.shape();
  if (eps.rows() != 1 || eps.cols() != sh.pixels()) throw ShapeError("objective: noise does not match the target");
  ag::Var<S> r0 = ag::sub(y, x_cp);
  if (opt.detach_residual) r0 = tape.constant(sh, r0.value());
  const Mat<S> noise_part = eps * static_cast<S>(std::sqrt(1.0 - gamma));
  const ag::Var<S> r_t = ag::add(ag::scale(r0, static_cast<S>(std::sqrt(gamma))), tape.constant(sh, noise_part));

  std::vector<ag::Var<S>> pyramid;
  for (const auto& p : ex.pyramid) pyramid.push_back(constant_of(tape, p));
  const std::vector<ag::Var<S>> feats = nets.extract_aux_features(b, pyramid);
  const ag::Var<S> eps_hat = nets.irm_denoise(b, cond, r_t, gamma, feats);
  r.parts.main = loss_main(eps_hat, tape.constant(sh, eps));

  if (nets.has_aux()) {
    const GuidanceConfig& g = cfg.guidance;
    const int n_nas = g.use_nas ? g.n_neighbors : 0;
    std::vector<ag::Var<S>> nas_pred, nas_tgt, spec_pred, spec_tgt;
    for (int k = 0; k < cfg.levels(); ++k) {
      const ag::Var<S> rec = nets.aux_head(b, feats[static_cast<std::size_t>(k)], k + 1);
      if (g.use_nas) {
        nas_pred.push_back(ag::slice_channels(rec, 0, n_nas));
        nas_tgt.push_back(constant_of(tape, ex.nas_target[static_cast<std::size_t>(k)]));
      }
      if (g.use_spectrum) {
        spec_pred.push_back(ag::slice_channels(rec, n_nas, 1));
        spec_tgt.push_back(constant_of(tape, ex.spectrum_target[static_cast<std::size_t>(k)]));
      }
    }
    if (g.use_nas) r.parts.nas = loss_guidance(nas_pred, nas_tgt);
    if (g.use_spectrum) r.parts.spectrum = loss_guidance(spec_pred, spec_tgt);
  }

  if (opt.weights.k > 0.0) {
    const ag::Var<S> y_tilde = intermediate_rpet(x_cp, r_t, eps_hat, gamma);
    std::vector<ag::Var<S>> negs;
    for (const auto& n : ex.negatives) negs.push_back(constant_of(tape, n));
    r.parts.contrastive = loss_contrastive(y_tilde, y, negs);
  }
  r.total = loss_total(r.parts, opt.weights);
  return r;
}

}  // namespace c2f
