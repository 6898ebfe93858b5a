#ifndef DSIN_GRAD_CHECK_HPP
#define DSIN_GRAD_CHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

// Central-difference check of reverse-mode gradients. `f` must rebuild its
// graph from the current parameter values on every call and return a scalar.
// Returns max over coordinates of
//   |analytic - central| / max(|analytic|, |central|, 1e-8).
// `max_coords_per_tensor` = 0 probes every coordinate; a positive value
// probes an evenly spaced subset of each tensor, for spot checks of large
// parameter blocks.
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double eps = 1e-5,
                         std::size_t max_coords_per_tensor = 0) {
  if (eps <= 0) throw value_error("grad_check eps must be positive");
  for (Tensor p : params) p.zero_grad();
  Tensor out = f();
  if (!std::isfinite(out.item()))
    throw numeric_error("grad_check: non-finite objective at base point");
  backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::size_t step = 1;
    if (max_coords_per_tensor > 0 && p.size() > max_coords_per_tensor)
      step = (p.size() + max_coords_per_tensor - 1) / max_coords_per_tensor;
    for (std::size_t i = 0; i < p.size(); i += step) {
      const double saved = p.values()[i];
      p.values()[i] = saved + eps;
      const double fp = f().item();
      p.values()[i] = saved - eps;
      const double fm = f().item();
      p.values()[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw numeric_error("grad_check: non-finite objective at probe");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace dsin

#endif  // DSIN_GRAD_CHECK_HPP
