#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fewsound/rng.hpp"
#include "fewsound/tensor.hpp"

namespace testutil {

template <typename T>
fewsound::Tensor<T> random_tensor(std::vector<std::size_t> shape, fewsound::Rng& rng,
                                  double lo = -1.0, double hi = 1.0) {
  fewsound::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline double rel_err(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  if (denom < 1e-6) return 0.0;  // both effectively zero
  return std::abs(a - b) / denom;
}

struct FdResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Central finite differences against analytic gradients. `forward` must
// recompute the scalar loss from the current parameter values; parameters are
// perturbed in place and restored.
inline FdResult fd_check(const std::vector<fewsound::Tensor<double>*>& params,
                         const std::vector<fewsound::Tensor<double>>& analytic,
                         const std::function<double()>& forward, double eps = 1e-3) {
  FdResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    fewsound::Tensor<double>& t = *params[p];
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + eps;
      const double f_plus = forward();
      t.data[i] = orig - eps;
      const double f_minus = forward();
      t.data[i] = orig;
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double an = analytic[p].data[i];
      result.max_rel = std::max(result.max_rel, rel_err(fd, an));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace testutil
