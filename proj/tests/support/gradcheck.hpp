#pragma once

// Central finite-difference gradient oracle, independent of the autodiff tape:
// it only ever evaluates the forward function on perturbed copies of the input.

#include <algorithm>
#include <cmath>
#include <functional>

#include "hdvp/core/autograd.hpp"

namespace hdvp::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
};

/// f maps a leaf Var to a scalar Var. Compares the tape gradient at `x0`
/// against (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate (or every
/// `stride`-th coordinate).
inline GradCheckResult grad_check(const std::function<Var<double>(const Var<double>&)>& f,
                                  const Tensor<double>& x0, double h = 1e-6, int stride = 1,
                                  double abs_floor = 1e-7) {
  auto x = Var<double>::leaf(x0);
  auto y = f(x);
  backward(y);
  Tensor<double> analytic = x.grad().numel() ? x.grad() : Tensor<double>(x0.shape());
  GradCheckResult res;
  for (std::int64_t i = 0; i < x0.numel(); i += stride) {
    Tensor<double> xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    double fp, fm;
    {
      NoGradGuard g;
      fp = f(Var<double>::constant(xp)).item();
      fm = f(Var<double>::constant(xm)).item();
    }
    const double numeric = (fp - fm) / (2 * h);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), abs_floor});
    res.max_abs_error = std::max(res.max_abs_error, abs_err);
    res.max_rel_error = std::max(res.max_rel_error, abs_err / denom);
  }
  return res;
}

}  // namespace hdvp::testing
