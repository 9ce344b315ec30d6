#include "c2f/metrics.hpp"

#include <cmath>

namespace c2f {

namespace {
void check_same_size(Eigen::Index a, Eigen::Index b, const char* who) {
  if (a != b) throw ShapeError(std::string(who) + ": size mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}
}  // namespace

double detail::psnr(const Eigen::ArrayXd& pred, const Eigen::ArrayXd& target, double data_range) {
  check_same_size(pred.size(), target.size(), "psnr");
  if (!(data_range > 0.0)) throw ParameterError("psnr: data_range must be positive");
  const double mse = (pred - target).square().mean();
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(data_range * data_range / mse);
}

double detail::nmse(const Eigen::ArrayXd& pred, const Eigen::ArrayXd& target) {
  check_same_size(pred.size(), target.size(), "nmse");
  const double energy = target.square().sum();
  if (energy == 0.0) throw DataError("nmse: target is identically zero");
  return (pred - target).square().sum() / energy;
}

namespace {

// Valid-mode separable filtering with a 1D kernel along rows then columns.
Mat<double> filter_valid(const Mat<double>& x, const Eigen::VectorXd& k) {
  const Eigen::Index n = k.size(), H = x.rows(), W = x.cols();
  Mat<double> tmp(H, W - n + 1);
  for (Eigen::Index j = 0; j < tmp.cols(); ++j) tmp.col(j) = x.middleCols(j, n) * k;
  Mat<double> out(H - n + 1, tmp.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = k.transpose() * tmp.middleRows(i, n);
  return out;
}

}  // namespace

double ssim(const Mat<double>& pred, const Mat<double>& target, const SsimOptions& opt) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("ssim: shape mismatch");
  if (opt.window < 1 || pred.rows() < opt.window || pred.cols() < opt.window) {
    throw ShapeError("ssim: image " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " is smaller than the " + std::to_string(opt.window) + "-pixel window");
  }
  const int r = opt.window / 2;
  Eigen::VectorXd k(opt.window);
  for (int i = 0; i < opt.window; ++i) k[i] = std::exp(-0.5 * (i - r) * (i - r) / (opt.sigma * opt.sigma));
  k /= k.sum();

  const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);
  const Mat<double> mx = filter_valid(pred, k), my = filter_valid(target, k);
  const Mat<double> sxx = filter_valid(pred.cwiseProduct(pred), k) - mx.cwiseProduct(mx);
  const Mat<double> syy = filter_valid(target.cwiseProduct(target), k) - my.cwiseProduct(my);
  const Mat<double> sxy = filter_valid(pred.cwiseProduct(target), k) - mx.cwiseProduct(my);
  const Eigen::ArrayXXd num = (2 * mx.array() * my.array() + c1) * (2 * sxy.array() + c2);
  const Eigen::ArrayXXd den = (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
  return (num / den).mean();
}

double sd_summary(const Volume& sd) {
  if (sd.empty()) return 0.0;
  return sd.voxels.cast<double>().mean();
}

Volume population_sd(const std::vector<Volume>& samples) {
  if (samples.empty()) throw ParameterError("population_sd: no samples");
  const Volume& first = samples.front();
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(first.size()), sq = sum;
  for (const auto& s : samples) {
    if (!s.same_shape(first)) throw ShapeError("population_sd: sample shapes differ");
    const Eigen::ArrayXd v = s.voxels.cast<double>();
    sum += v;
    sq += v.square();
  }
  const double n = static_cast<double>(samples.size());
  const Eigen::ArrayXd mean = sum / n;
  Volume out(first.depth, first.height, first.width);
  out.voxels = (sq / n - mean.square()).max(0.0).sqrt().cast<float>();
  return out;
}

MetricReport evaluate_volume(const Volume& pred, const Volume& target, const SsimOptions& opt) {
  if (!pred.same_shape(target)) throw ShapeError("evaluate_volume: shape mismatch");
  MetricReport rep;
  for (int z = 0; z < target.depth; ++z) {
    const Mat<double> t = target.slice(z).cast<double>();
    if (t.squaredNorm() <= 1e-6) continue;
    const Mat<double> p = pred.slice(z).cast<double>();
    SliceMetrics m;
    m.z = z;
    m.psnr_db = psnr(p.reshaped(), t.reshaped(), opt.data_range);
    m.ssim = ssim(p, t, opt);
    m.nmse = nmse(p.reshaped(), t.reshaped());
    rep.per_slice.push_back(m);
  }
  rep.n_slices = static_cast<int>(rep.per_slice.size());
  if (rep.n_slices == 0) throw DataError("evaluate_volume: target has no non-empty slices");
  for (const auto& m : rep.per_slice) {
    rep.psnr_db += m.psnr_db;
    rep.ssim += m.ssim;
    rep.nmse += m.nmse;
  }
  rep.psnr_db /= rep.n_slices;
  rep.ssim /= rep.n_slices;
  rep.nmse /= rep.n_slices;
  return rep;
}

}  // namespace c2f
