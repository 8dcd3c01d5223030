#pragma once

#include <algorithm>
#include <functional>

#include "scorelab/autodiff.hpp"
#include "scorelab/random.hpp"

namespace scorelab {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords = 50;  // sampled coordinates; all coords when numel is smaller
  std::uint64_t seed = 17;
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences. Returns max over sampled coordinates of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                         GradCheckOptions opt = {}) {
  Var xv = variable(x);
  Var y = f(xv);
  if (y->value.numel() != 1) throw NumericError("grad_check requires a scalar-valued function");
  if (!std::isfinite(y->value[0])) throw NumericError("grad_check: non-finite evaluation at x");
  backward(y);
  Tensor analytic = xv->grad.empty() ? Tensor::zeros(x.shape()) : xv->grad;

  auto eval = [&](const Tensor& point) {
    double v = f(constant(point))->value[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite evaluation at perturbed point");
    return v;
  };

  std::vector<std::size_t> coords(x.numel());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (coords.size() > opt.max_coords) {
    RandomSource rng(opt.seed, 0);
    std::vector<std::size_t> perm = shuffled_indices(coords.size(), rng);
    coords.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(opt.max_coords));
  }

  double max_rel = 0;
  Tensor probe = x;
  for (std::size_t c : coords) {
    double orig = probe[c];
    probe[c] = orig + opt.step;
    double fp = eval(probe);
    probe[c] = orig - opt.step;
    double fm = eval(probe);
    probe[c] = orig;
    double numeric = (fp - fm) / (2.0 * opt.step);
    double a = analytic[c];
    double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace scorelab
