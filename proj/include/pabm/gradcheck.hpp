#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/tensor.hpp"

namespace pabm {

// Max relative error between reverse-mode gradients and central finite
// differences, over all coordinates of all inputs:
//   |analytic - numeric| / max(1, |numeric|).
// The numeric passes run with the graph recorder off.
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor> xs, double eps) {
  check(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must be in [1e-7, 1e-3]");
  for (Tensor& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor y = f(xs);
  check(y.size() == 1, "grad_check: f must be scalar-valued");
  check(std::isfinite(y.item()), "grad_check: f is non-finite at x");
  y.backward();

  double worst = 0.0;
  NoGradGuard ng;
  for (Tensor& x : xs) {
    const std::vector<double> analytic =
        x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);
    for (size_t i = 0; i < x.size(); ++i) {
      double orig = x.data()[i];
      x.data()[i] = orig + eps;
      double fp = f(xs).item();
      x.data()[i] = orig - eps;
      double fm = f(xs).item();
      x.data()[i] = orig;
      check(std::isfinite(fp) && std::isfinite(fm),
            "grad_check: f is non-finite at a perturbed point");
      double numeric = (fp - fm) / (2.0 * eps);
      double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps) {
  return grad_check(
      [&f](const std::vector<Tensor>& xs) { return f(xs[0]); }, {x}, eps);
}

}  // namespace pabm
