#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "scorelab/autodiff.hpp"
#include "scorelab/nn.hpp"
#include "scorelab/random.hpp"
#include "scorelab/schedule.hpp"

namespace scorelab {

struct GuidanceConfig {
  double scale = 1.0;  // s in the guided mean; 0 reduces every sampler to unguided
  const TimeClassifierParams* classifier = nullptr;
  std::size_t target_label = 0;

  void validate(const NoiseSchedule& sched, std::size_t num_classes_hint = 0) const {
    if (!std::isfinite(scale)) throw NumericError("guidance scale must be finite");
    if (!classifier) throw NumericError("guidance requires a time classifier");
    classifier->check_schedule(sched);
    std::size_t k = num_classes_hint ? num_classes_hint : static_cast<std::size_t>(classifier->num_classes);
    if (target_label >= k) throw NumericError("guidance target label out of range");
  }
};

// x_t = sqrt(alpha_t) x0 + sigma_t eps, differentiable in x0.
inline Var forward_sample_var(const NoiseSchedule& sched, const Var& x0, int t, const Tensor& eps) {
  sched.check_t(t);
  if (!x0->value.same_shape(eps)) throw NumericError("forward_sample noise shape mismatch");
  return add(mul_scalar(x0, std::sqrt(sched.alpha[t])), constant(t_scale(eps, sched.sigma[t])));
}

inline Tensor forward_sample(const NoiseSchedule& sched, const Tensor& x0, int t, const Tensor& eps) {
  sched.check_t(t);
  if (!x0.same_shape(eps)) throw NumericError("forward_sample noise shape mismatch");
  return t_axpy(sched.sigma[t], eps, t_scale(x0, std::sqrt(sched.alpha[t])));
}

// Gradient of log p_phi(y | x_t, t) with respect to x_t.
inline Tensor classifier_score(const GuidanceConfig& guid, const NoiseSchedule& sched, const Tensor& x_t, int t) {
  guid.validate(sched);
  sched.check_t(t);
  Var xv = variable(x_t);
  Var logits = time_classifier_forward_var(*guid.classifier, xv, t);
  std::vector<std::size_t> labels(x_t.shape()[0], guid.target_label);
  Var objective = sum(gather_rows(log_softmax(logits), labels));
  backward(objective);
  return xv->grad.empty() ? Tensor::zeros(x_t.shape()) : xv->grad;
}

// Posterior mean parameterized by the noise predictor:
// mu = sqrt(alpha_{t-1}/alpha_t) (x_t - (sigma_t^2 - (alpha_t/alpha_{t-1}) sigma_{t-1}^2)/sigma_t * eps_hat)
namespace detail {

struct MuCoeffs {
  double scale;      // sqrt(alpha_{t-1}/alpha_t)
  double eps_coeff;  // (sigma_t^2 - (alpha_t/alpha_{t-1}) sigma_{t-1}^2) / sigma_t
};

inline MuCoeffs mu_coeffs(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.T) throw NumericError("posterior mean requires 1 <= t <= T");
  double a = sched.alpha[t], ap = sched.alpha[t - 1];
  double s2 = sched.sigma[t] * sched.sigma[t], sp2 = sched.sigma[t - 1] * sched.sigma[t - 1];
  return {std::sqrt(ap / a), (s2 - (a / ap) * sp2) / sched.sigma[t]};
}

}  // namespace detail

inline Tensor posterior_mu(const NoiseSchedule& sched, const DenoiserParams& denoiser, const Tensor& x_t, int t) {
  denoiser.check_schedule(sched);
  auto c = detail::mu_coeffs(sched, t);
  Tensor eps_hat = denoiser_forward(denoiser, x_t, t);
  return t_scale(t_axpy(-c.eps_coeff, eps_hat, x_t), c.scale);
}

// One stochastic reverse step: sample from
// N(mu_theta + s sigma_t score, beta_tilde_t I); guided when guidance is set.
inline Tensor reverse_step(const NoiseSchedule& sched, const DenoiserParams& denoiser, const Tensor& x_t, int t,
                           RandomSource& rng, const std::optional<GuidanceConfig>& guidance = std::nullopt) {
  denoiser.check_schedule(sched);
  Tensor mu = posterior_mu(sched, denoiser, x_t, t);
  if (guidance) {
    Tensor score = classifier_score(*guidance, sched, x_t, t);
    mu = t_axpy(guidance->scale * sched.sigma[t], score, mu);
  }
  double sd = std::sqrt(sched.posterior_variance(t));
  Tensor z = rng.gaussian_tensor(x_t.shape());
  return t_axpy(sd, z, mu);
}

// Deterministic DDIM step t -> t_prev with guided noise prediction
// eps_hat = eps_theta - sigma_t * score.
inline Var ddim_step_var(const NoiseSchedule& sched, const DenoiserParams& denoiser, const Var& x_t, int t,
                         int t_prev, const std::optional<GuidanceConfig>& guidance = std::nullopt) {
  denoiser.check_schedule(sched);
  sched.check_t(t);
  sched.check_t(t_prev);
  if (t_prev >= t) throw NumericError("ddim_step requires t_prev < t");
  Var eps_hat = denoiser_forward_var(denoiser, x_t, t);
  if (guidance && guidance->scale != 0.0) {
    Tensor score = classifier_score(*guidance, sched, x_t->value, t);
    eps_hat = add(eps_hat, constant(t_scale(score, -sched.sigma[t])));
  }
  double sa = std::sqrt(sched.alpha[t]), sap = std::sqrt(sched.alpha[t_prev]);
  // sqrt(a_prev) * (x_t - sigma_t eps_hat)/sqrt(a_t) + sigma_prev * eps_hat
  Var x0_pred = mul_scalar(add(x_t, mul_scalar(eps_hat, -sched.sigma[t])), 1.0 / sa);
  return add(mul_scalar(x0_pred, sap), mul_scalar(eps_hat, sched.sigma[t_prev]));
}

inline Tensor ddim_step(const NoiseSchedule& sched, const DenoiserParams& denoiser, const Tensor& x_t, int t,
                        int t_prev, const std::optional<GuidanceConfig>& guidance = std::nullopt) {
  return ddim_step_var(sched, denoiser, constant(x_t), t, t_prev, guidance)->value;
}

enum class SamplerKind { Ddpm, Ddim };

inline SamplerKind sampler_from_string(const std::string& s) {
  if (s == "ddpm") return SamplerKind::Ddpm;
  if (s == "ddim") return SamplerKind::Ddim;
  throw NumericError("unknown sampler kind: " + s);
}

// Iterates the chosen step from t_start down to t_end (DDIM strides, DDPM
// single steps). Returns `start` unchanged when t_start == t_end.
inline Tensor sample_chain(const NoiseSchedule& sched, const DenoiserParams& denoiser, Tensor start, int t_start,
                           int t_end, SamplerKind sampler, int stride, RandomSource& rng,
                           const std::optional<GuidanceConfig>& guidance = std::nullopt) {
  sched.check_t(t_start);
  sched.check_t(t_end);
  if (t_end > t_start) throw NumericError("sample_chain requires t_end <= t_start");
  if (stride < 1) throw NumericError("sample_chain stride must be >= 1");
  Tensor x = std::move(start);
  if (sampler == SamplerKind::Ddpm) {
    for (int t = t_start; t > t_end; --t) x = reverse_step(sched, denoiser, x, t, rng, guidance);
  } else {
    for (int t = t_start; t > t_end;) {
      int t_prev = std::max(t_end, t - stride);
      x = ddim_step(sched, denoiser, x, t, t_prev, guidance);
      t = t_prev;
    }
  }
  return x;
}

// Differentiable DDIM chain (used by the purifier-in-the-loop attack).
inline Var sample_chain_ddim_var(const NoiseSchedule& sched, const DenoiserParams& denoiser, Var x, int t_start,
                                 int t_end, int stride) {
  sched.check_t(t_start);
  sched.check_t(t_end);
  if (t_end > t_start) throw NumericError("sample_chain requires t_end <= t_start");
  for (int t = t_start; t > t_end;) {
    int t_prev = std::max(t_end, t - stride);
    x = ddim_step_var(sched, denoiser, x, t, t_prev);
    t = t_prev;
  }
  return x;
}

}  // namespace scorelab
