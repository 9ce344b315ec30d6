#pragma once

// Variance bookkeeping and the forward/reverse Gaussian transitions of the
// residual diffusion process. Tensors are any Eigen matrix expressions; the
// schedules themselves are always kept in double precision.

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "c2f/errors.hpp"
#include "c2f/random.hpp"

namespace c2f {

enum class ScheduleKind { linear };

ScheduleKind parse_schedule_kind(const std::string& name);

/// Per-step retention factors alpha_t and their running products gamma_t.
/// Steps are 1-based in the public accessors; gamma(0) is defined as 1 so the
/// last reverse step is noise free.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(Eigen::VectorXd alphas, Eigen::VectorXd gammas);

  /// Rebuild alphas as consecutive ratios of the given gammas.
  static NoiseSchedule from_gammas(const Eigen::VectorXd& gammas);

  int steps() const { return static_cast<int>(alphas_.size()); }
  double alpha(int t) const;
  double gamma(int t) const;

  const Eigen::VectorXd& alphas() const { return alphas_; }
  const Eigen::VectorXd& gammas() const { return gammas_; }

  /// Throws ParameterError when an invariant is broken.
  void validate() const;

 private:
  Eigen::VectorXd alphas_;
  Eigen::VectorXd gammas_;
};

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end);

/// Few-step schedule built from evenly spaced indices of a training schedule.
/// The last training step is always kept.
NoiseSchedule make_inference_schedule(const NoiseSchedule& train, int n_steps);

struct GammaSample {
  double gamma = 1.0;
  int t = 1;
};

/// Continuous noise level: t uniform in {1..T}, then gamma uniform in
/// [gamma_t, gamma_{t-1}].
GammaSample sample_gamma_train(const NoiseSchedule& schedule, Rng& rng);

namespace detail {
template <class A, class B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     ")");
  }
}
}  // namespace detail

/// sqrt(gamma) * x0 + sqrt(1 - gamma) * eps
template <class D1, class D2>
typename D1::PlainObject forward_sample(const Eigen::MatrixBase<D1>& x0, double gamma, const Eigen::MatrixBase<D2>& eps) {
  detail::require_same_shape(x0, eps, "forward_sample");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("forward_sample: gamma must lie in (0, 1]");
  using S = typename D1::Scalar;
  return (static_cast<S>(std::sqrt(gamma)) * x0 + static_cast<S>(std::sqrt(1.0 - gamma)) * eps).eval();
}

/// Inverse of forward_sample for a known (or predicted) noise.
template <class D1, class D2>
typename D1::PlainObject predict_x0_from_eps(const Eigen::MatrixBase<D1>& x_t, const Eigen::MatrixBase<D2>& eps_hat,
                                             double gamma) {
  detail::require_same_shape(x_t, eps_hat, "predict_x0_from_eps");
  if (!(gamma > 0.0)) throw ParameterError("predict_x0_from_eps: gamma must be positive");
  using S = typename D1::Scalar;
  return ((x_t - static_cast<S>(std::sqrt(1.0 - gamma)) * eps_hat) / static_cast<S>(std::sqrt(gamma))).eval();
}

template <class Plain>
struct PosteriorParams {
  Plain mean;
  double variance = 0.0;
};

struct PosteriorCoefficients {
  double x0 = 0.0;
  double xt = 0.0;
  double variance = 0.0;
};

/// Coefficients of q(x_{t-1} | x_0, x_t).
PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& schedule);

template <class D1, class D2>
PosteriorParams<typename D1::PlainObject> posterior_params(const Eigen::MatrixBase<D1>& x0,
                                                           const Eigen::MatrixBase<D2>& x_t, int t,
                                                           const NoiseSchedule& schedule) {
  detail::require_same_shape(x0, x_t, "posterior_params");
  const PosteriorCoefficients k = posterior_coefficients(t, schedule);
  using S = typename D1::Scalar;
  return {(static_cast<S>(k.x0) * x0 + static_cast<S>(k.xt) * x_t).eval(), k.variance};
}

/// One ancestral step r_t -> r_{t-1}. The one-step estimate of r_0 is clamped
/// to [-clip, clip] before it enters the posterior. At t = 1 the posterior
/// mean is returned without noise.
template <class D1, class D2>
typename D1::PlainObject reverse_step(const Eigen::MatrixBase<D1>& r_t, const Eigen::MatrixBase<D2>& eps_hat, int t,
                                      const NoiseSchedule& schedule, Rng& rng, double clip = 1.0) {
  using S = typename D1::Scalar;
  using Plain = typename D1::PlainObject;
  if (t < 1 || t > schedule.steps()) throw ParameterError("reverse_step: step index out of range");
  Plain r0 = predict_x0_from_eps(r_t, eps_hat, schedule.gamma(t));
  r0 = r0.cwiseMax(static_cast<S>(-clip)).cwiseMin(static_cast<S>(clip));
  auto post = posterior_params(r0, r_t, t, schedule);
  if (t == 1 || post.variance == 0.0) return post.mean;
  Plain noise(r_t.rows(), r_t.cols());
  rng.fill_normal(noise);
  return (post.mean + static_cast<S>(std::sqrt(post.variance)) * noise).eval();
}

}  // namespace c2f
