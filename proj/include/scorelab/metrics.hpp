#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "scorelab/nn.hpp"
#include "scorelab/purify.hpp"

namespace scorelab {

// 10 log10(1 / MSE) on [0,1]-range images; identical inputs flag +infinity.
inline double psnr(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw NumericError("psnr shape mismatch");
  double mse = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sd) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  double sum = 0;
  int half = size / 2;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dy = y - half, dx = x - half;
      double v = std::exp(-(dx * dx + dy * dy) / (2 * sd * sd));
      w[static_cast<std::size_t>(y * size + x)] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace detail

// Mean SSIM with an 11x11 Gaussian window (sd 1.5), C1=(0.01 L)^2,
// C2=(0.03 L)^2, L=1, over valid window positions, averaged per channel.
inline double ssim(const Tensor& a, const Tensor& b, int window = 11, double sd = 1.5) {
  if (!a.same_shape(b)) throw NumericError("ssim shape mismatch");
  if (a.rank() < 2) throw NumericError("ssim requires at least [H,W]");
  std::size_t W = a.shape()[a.rank() - 1];
  std::size_t H = a.shape()[a.rank() - 2];
  std::size_t planes = a.numel() / (H * W);
  if (H < static_cast<std::size_t>(window) || W < static_cast<std::size_t>(window))
    throw NumericError("ssim image smaller than window");
  auto kern = detail::gaussian_window(window, sd);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* pa = a.data() + p * H * W;
    const double* pb = b.data() + p * H * W;
    for (std::size_t cy = 0; cy + window <= H; ++cy)
      for (std::size_t cx = 0; cx + window <= W; ++cx) {
        double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx) {
            double wgt = kern[static_cast<std::size_t>(ky * window + kx)];
            double xa = pa[(cy + static_cast<std::size_t>(ky)) * W + cx + static_cast<std::size_t>(kx)];
            double xb = pb[(cy + static_cast<std::size_t>(ky)) * W + cx + static_cast<std::size_t>(kx)];
            ma += wgt * xa;
            mb += wgt * xb;
            va += wgt * xa * xa;
            vb += wgt * xb * xb;
            cov += wgt * xa * xb;
          }
        va -= ma * ma;
        vb -= mb * mb;
        cov -= ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

// l2 distance between penultimate-layer activations of a trained classifier,
// normalized per dimension (RMS over feature coordinates), mean over batch.
inline double feature_distance(const ClassifierParams& classifier, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw NumericError("feature_distance shape mismatch");
  Tensor a4 = a.rank() == 3 ? a.reshaped({1, a.shape()[0], a.shape()[1], a.shape()[2]}) : a;
  Tensor b4 = b.rank() == 3 ? b.reshaped({1, b.shape()[0], b.shape()[1], b.shape()[2]}) : b;
  LiftedParams lp(classifier.store, false);
  Tensor fa = classifier_graph(classifier, lp, constant(a4)).features->value;
  Tensor fb = classifier_graph(classifier, lp, constant(b4)).features->value;
  std::size_t B = fa.shape()[0], D = fa.shape()[1];
  double total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) {
      double diff = fa[i * D + d] - fb[i * D + d];
      s += diff * diff;
    }
    total += std::sqrt(s / static_cast<double>(D));
  }
  return total / static_cast<double>(B);
}

// Optional purification stage in front of a victim during evaluation.
struct ProtectedEval {
  PurifyConfig cfg;
  const DenoiserParams* denoiser;
  const NoiseSchedule* sched;
};

inline std::vector<std::size_t> pipeline_predict(const ClassifierParams& victim,
                                                 const std::optional<ProtectedEval>& prot, const Tensor& x) {
  if (!prot) return classify(victim, x);
  RandomSource rng(prot->cfg.seed, 0xE7A1);  // consulted only under the fresh-per-call policy
  return protected_predict(victim, prot->cfg, *prot->denoiser, *prot->sched, x, rng);
}

// Fraction of originally-correct images whose (purify o)? classification flips.
// Original correctness is judged under the same pipeline with the same
// purification seeds, so clean inputs give ASR 0 by construction.
inline double attack_success_rate(const ClassifierParams& victim, const std::optional<ProtectedEval>& prot,
                                  const Tensor& x_clean, const Tensor& x_adv, const std::vector<std::size_t>& y) {
  if (!x_clean.same_shape(x_adv) || x_clean.shape()[0] != y.size())
    throw NumericError("attack_success_rate batch mismatch");
  auto clean_pred = pipeline_predict(victim, prot, x_clean);
  auto adv_pred = pipeline_predict(victim, prot, x_adv);
  std::size_t denom = 0, flipped = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (clean_pred[i] != y[i]) continue;
    ++denom;
    if (adv_pred[i] != y[i]) ++flipped;
  }
  if (denom == 0) throw NumericError("attack_success_rate: no correctly-classified clean images in batch");
  return static_cast<double>(flipped) / static_cast<double>(denom);
}

struct IqaTriplet {
  double psnr_db;
  double ssim_value;
  double feat_dist;
};

struct IqaPairReport {
  IqaTriplet clean_vs_purified_adv;          // main values
  IqaTriplet purified_clean_vs_purified_adv; // bracketed values
};

inline IqaTriplet iqa_triplet(const ClassifierParams& classifier, const Tensor& a, const Tensor& b) {
  return {psnr(a, b), ssim(a, b), feature_distance(classifier, a, b)};
}

inline IqaPairReport iqa_pair_report(const ClassifierParams& classifier, const Tensor& clean, const Tensor& x_adv,
                                     const Tensor& purified_adv, const Tensor& purified_clean) {
  (void)x_adv;  // the raw adversarial batch defines the pairing; both reports compare against purified_adv
  return {iqa_triplet(classifier, clean, purified_adv),
          iqa_triplet(classifier, purified_clean, purified_adv)};
}

struct RuntimeStats {
  double mean_seconds = 0;
  double std_seconds = 0;
  double per_iteration_seconds = 0;
  int repetitions = 0;
};

// Wall-clock statistics over `repetitions` runs with one warm-up excluded.
inline RuntimeStats runtime_bench(const std::function<void()>& thunk, int repetitions, int iterations_per_run) {
  if (repetitions < 3) throw NumericError("runtime_bench requires repetitions >= 3");
  thunk();  // warm-up
  std::vector<double> secs;
  secs.reserve(static_cast<std::size_t>(repetitions));
  for (int r = 0; r < repetitions; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    thunk();
    secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  RuntimeStats s;
  s.repetitions = repetitions;
  for (double v : secs) s.mean_seconds += v;
  s.mean_seconds /= repetitions;
  for (double v : secs) s.std_seconds += (v - s.mean_seconds) * (v - s.mean_seconds);
  s.std_seconds = std::sqrt(s.std_seconds / repetitions);
  s.per_iteration_seconds = s.mean_seconds / std::max(1, iterations_per_run);
  return s;
}

}  // namespace scorelab
