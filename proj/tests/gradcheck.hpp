#pragma once

// Central finite-difference oracle for scalar functions of several matrices.
// Independent of the tape: it only evaluates the forward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  long checked = 0;
  long nonzero = 0;
};

/// f evaluates the loss at the current values of inputs; analytic[i] holds
/// d f / d inputs[i]. Relative error uses max(|a|, |n|, floor).
inline GradCheckResult check_gradients(std::vector<Mat<double>*> inputs, const std::vector<Mat<double>>& analytic,
                                       const std::function<double()>& f, double h = 1e-6, double floor = 1e-6,
                                       long stride = 1) {
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Mat<double>& x = *inputs[i];
    for (Eigen::Index j = 0; j < x.size(); j += stride) {
      const double orig = x.data()[j];
      x.data()[j] = orig + h;
      const double fp = f();
      x.data()[j] = orig - h;
      const double fm = f();
      x.data()[j] = orig;
      const double num = (fp - fm) / (2 * h);
      const double ana = analytic[i].data()[j];
      const double abs_err = std::abs(num - ana);
      const double rel = abs_err / std::max({std::abs(num), std::abs(ana), floor});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      ++r.checked;
      if (ana != 0.0) ++r.nonzero;
    }
  }
  return r;
}

}  // namespace c2f::testing
