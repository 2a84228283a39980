#pragma once

// Central finite-difference oracle for autodiff gradients. Test-only: it evaluates the loss
// through forward passes alone and never reads the backward closures it is checking.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "wss/numerics/tensor.hpp"

namespace wss::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  // "param[i]: analytic vs numeric"
  std::size_t checked = 0;
};

/// Relative error with a small floor so that entries whose true gradient is ~0 are judged
/// on absolute error.
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Compares backward() against (f(p+h) - f(p-h)) / 2h for every entry (or every `stride`-th
/// entry) of each parameter. The relative-error floor is 1e-6 * max(1, |f|): central differences
/// carry roundoff of order eps * |f| / h, so smaller gradients are judged on absolute error.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                                  std::vector<Tensor<double>> params, double step = 1e-5,
                                  Index stride = 1) {
  for (auto& p : params) p.zero_grad();
  const Tensor<double> base = loss_fn();
  const double floor = 1e-6 * std::max(1.0, std::abs(base.item()));
  backward(base);
  GradCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const auto analytic = p.grad();
    for (Index i = 0; i < p.numel(); i += stride) {
      auto& v = p.mutable_value();
      const double orig = v[i];
      double plus, minus;
      {
        NoGradGuard ng;
        v[i] = orig + step;
        plus = loss_fn().item();
        v[i] = orig - step;
        minus = loss_fn().item();
        v[i] = orig;
      }
      const double numeric = (plus - minus) / (2 * step);
      const double e = rel_error(analytic[i], numeric, floor);
      ++r.checked;
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = "param " + std::to_string(k) + "[" + std::to_string(i) + "]: analytic " +
                  fmt(analytic[i]) + " vs numeric " + fmt(numeric);
      }
    }
  }
  return r;
}

}  // namespace wss::testing
