#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "scorelab/errors.hpp"

namespace scorelab {

// Variance-preserving noise schedule. alpha[t] is the cumulative product
// convention (the forward process scales x0 by sqrt(alpha[t])), so
// alpha[t] + sigma[t]^2 = 1 for all t, alpha[0] = 1, sigma[0] = 0.
struct NoiseSchedule {
  std::string kind;
  int T = 0;
  double beta_min = 0, beta_max = 0;
  std::vector<double> alpha;  // size T+1, cumulative
  std::vector<double> sigma;  // size T+1, sqrt(1 - alpha)

  double snr(int t) const { return alpha[t] * alpha[t] / (sigma[t] * sigma[t]); }

  // per-step beta recovered from the cumulative products, t in [1,T]
  double beta(int t) const { return 1.0 - alpha[t] / alpha[t - 1]; }

  // posterior variance of the reverse step, t in [1,T]
  double posterior_variance(int t) const {
    return (1.0 - alpha[t - 1]) / (1.0 - alpha[t]) * beta(t);
  }

  void check_t(int t) const {
    if (t < 0 || t > T) throw NumericError("timestep " + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
  }

  // 64-bit FNV-1a over the alpha array bit patterns.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (double a : alpha) {
      std::uint64_t bits;
      std::memcpy(&bits, &a, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ull;
      }
    }
    return h;
  }
};

namespace detail {

inline void validate_schedule(const NoiseSchedule& s) {
  if (s.alpha[0] != 1.0 || s.sigma[0] != 0.0) throw NumericError("schedule must have alpha_0 = 1, sigma_0 = 0");
  for (int t = 0; t <= s.T; ++t) {
    if (!(s.alpha[t] > 0.0) || s.alpha[t] > 1.0) throw NumericError("schedule alpha out of (0,1]");
    double vp = s.alpha[t] + s.sigma[t] * s.sigma[t];
    if (std::abs(vp - 1.0) > 1e-12) throw NumericError("schedule is not variance-preserving");
  }
  for (int t = 1; t <= s.T; ++t) {
    if (!(s.snr(t) < s.snr(t - 1))) throw NumericError("schedule SNR not strictly decreasing at t=" + std::to_string(t));
  }
  if (!(s.alpha[s.T] < 1e-3))
    throw NumericError("schedule alpha_T = " + std::to_string(s.alpha[s.T]) + " >= 1e-3; T too small");
}

}  // namespace detail

// linear-beta: per-step betas linear in [1e-4, 0.02] at the T=1000 reference,
// rescaled by 1000/T so the terminal cumulative alpha stays t-grid invariant.
// cosine: squared-cosine cumulative schedule with per-step beta clamped.
inline NoiseSchedule make_schedule(const std::string& kind, int T) {
  if (T < 10) throw NumericError("schedule requires T >= 10");
  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.sigma.assign(static_cast<std::size_t>(T) + 1, 0.0);

  if (kind == "linear-beta") {
    double scale = 1000.0 / static_cast<double>(T);
    s.beta_min = 1e-4 * scale;
    s.beta_max = 0.02 * scale;
    if (s.beta_max >= 1.0) throw NumericError("linear-beta schedule invalid: T too small");
    double cum = 1.0;
    for (int t = 1; t <= T; ++t) {
      double beta = s.beta_min + (s.beta_max - s.beta_min) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
      cum *= 1.0 - beta;
      s.alpha[t] = cum;
      s.sigma[t] = std::sqrt(1.0 - cum);
    }
  } else if (kind == "cosine") {
    const double offset = 0.008;
    auto f = [&](double t) {
      double v = std::cos((t / T + offset) / (1.0 + offset) * M_PI / 2.0);
      return v * v;
    };
    double f0 = f(0.0);
    double cum = 1.0, prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      double target = f(static_cast<double>(t)) / f0;
      double beta = 1.0 - target / prev;
      beta = std::min(beta, 0.999);
      cum *= 1.0 - beta;
      prev = target;
      s.alpha[t] = cum;
      s.sigma[t] = std::sqrt(1.0 - cum);
    }
  } else {
    throw NumericError("unknown schedule kind: " + kind);
  }

  detail::validate_schedule(s);
  return s;
}

}  // namespace scorelab
