#pragma once

// PSNR, SSIM and NMSE on [0, 1] intensities, the mean-SD summary of AMS
// runs, and slice-averaged per-volume reports.

#include <limits>
#include <string>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

namespace detail {
double psnr(const Eigen::ArrayXd& pred, const Eigen::ArrayXd& target, double data_range);
double nmse(const Eigen::ArrayXd& pred, const Eigen::ArrayXd& target);
}  // namespace detail

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean local SSIM over every position where the Gaussian window fits.
double ssim(const Mat<double>& pred, const Mat<double>& target, const SsimOptions& opt = {});

/// 10 log10(range^2 / MSE); +infinity when MSE is zero.
template <class A, class B>
double psnr(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target, double data_range = 1.0) {
  return detail::psnr(Eigen::ArrayXd(pred.derived().template cast<double>().reshaped()),
              Eigen::ArrayXd(target.derived().template cast<double>().reshaped()), data_range);
}

template <class A, class B>
double nmse(const Eigen::DenseBase<A>& pred, const Eigen::DenseBase<B>& target) {
  return detail::nmse(Eigen::ArrayXd(pred.derived().template cast<double>().reshaped()),
              Eigen::ArrayXd(target.derived().template cast<double>().reshaped()));
}

template <class A, class B>
double ssim(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& target, const SsimOptions& opt = {}) {
  return ssim(Mat<double>(pred.template cast<double>()), Mat<double>(target.template cast<double>()), opt);
}

/// Mean of a per-voxel SD volume.
double sd_summary(const Volume& sd);

/// Per-voxel population SD over samples (all the same shape).
Volume population_sd(const std::vector<Volume>& samples);

struct SliceMetrics {
  int z = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nmse = 0.0;
};

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nmse = 0.0;
  int n_slices = 0;
  std::vector<SliceMetrics> per_slice;
};

/// Slice-wise metrics averaged over slices whose target energy exceeds 1e-6.
MetricReport evaluate_volume(const Volume& pred, const Volume& target, const SsimOptions& opt = {});

}  // namespace c2f
