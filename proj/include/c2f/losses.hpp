#pragma once

// Training objectives: the L1 noise-prediction loss on the residual, the
// per-level guidance reconstruction loss, the step-wise contrastive loss on
// the one-step estimate, and their weighted total.

#include <cmath>
#include <string>
#include <vector>

#include "c2f/autograd.hpp"
#include "c2f/log.hpp"

namespace c2f {

struct LossWeights {
  double m = 1.0;     // NAS guidance
  double n = 1.0;     // spectrum guidance
  double k = 5e-5;    // contrastive

  void validate() const {
    for (double v : {m, n, k}) {
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and >= 0");
    }
  }
};

/// Scalar values of one evaluation, for logging.
struct LossRecord {
  double main = 0.0;
  double nas = 0.0;
  double spectrum = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

template <class S>
struct LossParts {
  ag::Var<S> main;
  ag::Var<S> nas;
  ag::Var<S> spectrum;
  ag::Var<S> contrastive;
};

/// Mean absolute error between predicted and true noise.
template <class S>
ag::Var<S> loss_main(ag::Var<S> eps_hat, ag::Var<S> eps) {
  return ag::l1_mean(eps_hat, eps);
}

/// Sum over pyramid levels of the per-level mean absolute error.
template <class S>
ag::Var<S> loss_guidance(const std::vector<ag::Var<S>>& predicted, const std::vector<ag::Var<S>>& target) {
  if (predicted.size() != target.size() || predicted.empty()) {
    throw ConfigError("loss_guidance: " + std::to_string(predicted.size()) + " predicted levels vs " +
                      std::to_string(target.size()) + " target levels");
  }
  ag::Var<S> sum = ag::l1_mean(predicted[0], target[0]);
  for (std::size_t k = 1; k < predicted.size(); ++k) sum = ag::add(sum, ag::l1_mean(predicted[k], target[k]));
  return sum;
}

/// One-step estimate x_cp + (r_t - sqrt(1 - gamma) eps_hat) / sqrt(gamma).
template <class S>
ag::Var<S> intermediate_rpet(ag::Var<S> x_cp, ag::Var<S> r_t, ag::Var<S> eps_hat, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("intermediate_rpet: gamma must be positive");
  const S inv = static_cast<S>(1.0 / std::sqrt(gamma));
  const S c = static_cast<S>(std::sqrt(1.0 - gamma) / std::sqrt(gamma));
  ag::Var<S> r0 = ag::sub(ag::scale(r_t, inv), ag::scale(eps_hat, c));
  return ag::add(x_cp, r0);
}

/// d(y, y~) - sum_i d(y_i, y~) with d the mean absolute error. With no
/// negatives only the positive term remains.
template <class S>
ag::Var<S> loss_contrastive(ag::Var<S> y_tilde, ag::Var<S> y, const std::vector<ag::Var<S>>& negatives) {
  ag::Var<S> loss = ag::l1_mean(y_tilde, y);
  if (negatives.empty()) {
    log_warn("contrastive loss: empty negative set, using the positive term only");
    return loss;
  }
  for (const auto& neg : negatives) loss = ag::sub(loss, ag::l1_mean(y_tilde, neg));
  return loss;
}

/// L_main + m L_nas + n L_spectrum + k L_cl. Missing parts count as zero.
/// Throws TrainingError naming the first non-finite term.
template <class S>
ag::Var<S> loss_total(const LossParts<S>& parts, const LossWeights& w) {
  const std::pair<const char*, const ag::Var<S>*> named[] = {
      {"main", &parts.main}, {"nas", &parts.nas}, {"spectrum", &parts.spectrum}, {"contrastive", &parts.contrastive}};
  for (const auto& [name, v] : named) {
    if (v->valid() && !std::isfinite(static_cast<double>(v->item()))) {
      throw TrainingError(std::string("non-finite loss term '") + name + "'");
    }
  }
  ag::Var<S> total = parts.main;
  auto add_weighted = [&](const ag::Var<S>& v, double weight) {
    if (v.valid() && weight != 0.0) total = ag::add(total, ag::scale(v, static_cast<S>(weight)));
  };
  add_weighted(parts.nas, w.m);
  add_weighted(parts.spectrum, w.n);
  add_weighted(parts.contrastive, w.k);
  return total;
}

template <class S>
LossRecord record_of(const LossParts<S>& parts, const ag::Var<S>& total) {
  auto val = [](const ag::Var<S>& v) { return v.valid() ? static_cast<double>(v.item()) : 0.0; };
  return {val(parts.main), val(parts.nas), val(parts.spectrum), val(parts.contrastive), val(total)};
}

}  // namespace c2f
