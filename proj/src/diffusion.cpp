#include "c2f/diffusion.hpp"

#include <algorithm>

namespace c2f {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  throw ParameterError("unknown schedule kind '" + name + "' (expected: linear)");
}

NoiseSchedule::NoiseSchedule(Eigen::VectorXd alphas, Eigen::VectorXd gammas)
    : alphas_(std::move(alphas)), gammas_(std::move(gammas)) {
  validate();
}

NoiseSchedule NoiseSchedule::from_gammas(const Eigen::VectorXd& gammas) {
  Eigen::VectorXd alphas(gammas.size());
  double prev = 1.0;
  for (Eigen::Index i = 0; i < gammas.size(); ++i) {
    alphas[i] = gammas[i] / prev;
    prev = gammas[i];
  }
  return NoiseSchedule(std::move(alphas), gammas);
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > steps()) throw ParameterError("alpha: step " + std::to_string(t) + " outside [1, T]");
  return alphas_[t - 1];
}

double NoiseSchedule::gamma(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps()) throw ParameterError("gamma: step " + std::to_string(t) + " outside [0, T]");
  return gammas_[t - 1];
}

void NoiseSchedule::validate() const {
  if (alphas_.size() == 0) throw ParameterError("schedule must have at least one step");
  if (alphas_.size() != gammas_.size()) throw ParameterError("schedule alphas/gammas length mismatch");
  double prod = 1.0;
  double prev = 1.0;
  for (Eigen::Index i = 0; i < alphas_.size(); ++i) {
    const double a = alphas_[i];
    const double g = gammas_[i];
    if (!(a > 0.0 && a < 1.0)) throw ParameterError("schedule alpha outside (0,1) at step " + std::to_string(i + 1));
    if (!(g > 0.0 && g < 1.0)) throw ParameterError("schedule gamma outside (0,1) at step " + std::to_string(i + 1));
    if (!(g < prev)) throw ParameterError("schedule gammas not strictly decreasing at step " + std::to_string(i + 1));
    prod *= a;
    if (std::abs(prod - g) > 1e-12 * std::abs(g)) {
      throw ParameterError("schedule gamma is not the running product of alphas at step " + std::to_string(i + 1));
    }
    prev = g;
  }
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end) {
  if (kind != ScheduleKind::linear) throw ParameterError("unsupported schedule kind");
  if (steps < 1) throw ParameterError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ParameterError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  Eigen::VectorXd alphas(steps), gammas(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    alphas[i] = 1.0 - beta;
    prod *= alphas[i];
    gammas[i] = prod;
  }
  return NoiseSchedule(std::move(alphas), std::move(gammas));
}

NoiseSchedule make_inference_schedule(const NoiseSchedule& train, int n_steps) {
  const int T = train.steps();
  if (n_steps < 1 || n_steps > T) {
    throw ParameterError("inference steps " + std::to_string(n_steps) + " outside [1, " + std::to_string(T) + "]");
  }
  if (n_steps == T) return train;
  Eigen::VectorXd gammas(n_steps);
  for (int i = 1; i <= n_steps; ++i) {
    // floor(i*T/n) is strictly increasing because T/n >= 1, and equals T at i = n.
    const long idx = static_cast<long>(i) * T / n_steps;
    gammas[i - 1] = train.gamma(static_cast<int>(idx));
  }
  return NoiseSchedule::from_gammas(gammas);
}

GammaSample sample_gamma_train(const NoiseSchedule& schedule, Rng& rng) {
  GammaSample s;
  s.t = static_cast<int>(rng.uniform_int(1, schedule.steps()));
  const double lo = schedule.gamma(s.t);
  const double hi = schedule.gamma(s.t - 1);
  s.gamma = std::clamp(rng.uniform(lo, hi), lo, hi);
  return s;
}

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) throw ParameterError("posterior: step index out of range");
  const double a = schedule.alpha(t);
  const double g = schedule.gamma(t);
  const double g_prev = schedule.gamma(t - 1);
  PosteriorCoefficients k;
  k.x0 = std::sqrt(g_prev) * (1.0 - a) / (1.0 - g);
  k.xt = std::sqrt(a) * (1.0 - g_prev) / (1.0 - g);
  k.variance = std::max(0.0, (1.0 - g_prev) * (1.0 - a) / (1.0 - g));
  return k;
}

}  // namespace c2f
