#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "scorelab/diffusion.hpp"
#include "scorelab/threading.hpp"

namespace scorelab {

// Diffusion-based purification: forward-noise a [0,1] image to t_star in the
// [-1,1] diffusion domain, run the reverse chain back to 0, map back and clamp.
// t_star = 0 degenerates to the identity.
struct PurifyConfig {
  int t_star = 30;
  std::string sampler = "ddim";
  int ddim_stride = 3;
  std::string seed_policy = "fixed";  // fixed | fresh-per-call
  std::uint64_t seed = 3407;

  void validate(const NoiseSchedule& sched) const {
    if (t_star < 0 || t_star > sched.T) throw NumericError("purify t_star outside [0,T]");
    sampler_from_string(sampler);
    if (ddim_stride < 1) throw NumericError("purify ddim_stride must be >= 1");
    if (seed_policy != "fixed" && seed_policy != "fresh-per-call")
      throw NumericError("purify seed_policy must be fixed or fresh-per-call");
  }

  static PurifyConfig defaults_for(const NoiseSchedule& sched) {
    PurifyConfig cfg;
    cfg.t_star = std::max(1, static_cast<int>(0.15 * sched.T));
    cfg.ddim_stride = std::max(1, cfg.t_star / 10);
    return cfg;
  }
};

inline void to_json(nlohmann::json& j, const PurifyConfig& c) {
  j = {{"t_star", c.t_star}, {"sampler", c.sampler}, {"ddim_stride", c.ddim_stride},
       {"seed_policy", c.seed_policy}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PurifyConfig& c) {
  j.at("t_star").get_to(c.t_star);
  j.at("sampler").get_to(c.sampler);
  j.at("ddim_stride").get_to(c.ddim_stride);
  if (j.contains("seed_policy")) j.at("seed_policy").get_to(c.seed_policy);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

// Purifies a batch [B,C,H,W]; images are processed independently on per-image
// rng streams, so results do not depend on batch composition or thread count.
inline Tensor purify(const PurifyConfig& cfg, const DenoiserParams& denoiser, const NoiseSchedule& sched,
                     const Tensor& x, RandomSource& rng) {
  cfg.validate(sched);
  denoiser.check_schedule(sched);
  if (x.rank() != 4) throw NumericError("purify expects [B,C,H,W]");
  if (cfg.t_star == 0) return x;

  std::size_t B = x.shape()[0];
  std::size_t dim = x.numel() / B;
  SamplerKind sampler = sampler_from_string(cfg.sampler);
  bool fixed = cfg.seed_policy == "fixed";
  std::uint64_t base_seed = fixed ? cfg.seed : rng.next_u64();

  Tensor out = Tensor::zeros(x.shape());
  parallel_for(B, [&](std::size_t i) {
    RandomSource img_rng = RandomSource(base_seed, 0xBDF).substream(i);
    Tensor xi = x.slice0(i, 1);
    for (auto& v : xi.span()) v = 2.0 * v - 1.0;
    Tensor eps = img_rng.gaussian_tensor(xi.shape());
    Tensor xt = forward_sample(sched, xi, cfg.t_star, eps);
    Tensor x0 = sample_chain(sched, denoiser, std::move(xt), cfg.t_star, 0, sampler, cfg.ddim_stride, img_rng);
    for (std::size_t k = 0; k < dim; ++k) {
      double v = 0.5 * (x0[k] + 1.0);
      out[i * dim + k] = v < 0 ? 0 : (v > 1 ? 1 : v);
    }
  });
  return out;
}

// Differentiable purification graph (DDIM only): the path the
// purifier-in-the-loop baseline backpropagates through. The forward noise is
// supplied by the caller so iterations control their own draws.
inline Var purify_graph(const PurifyConfig& cfg, const DenoiserParams& denoiser, const NoiseSchedule& sched,
                        const Var& x01, const Tensor& eps) {
  cfg.validate(sched);
  denoiser.check_schedule(sched);
  if (sampler_from_string(cfg.sampler) != SamplerKind::Ddim)
    throw NumericError("differentiable purification requires the ddim sampler");
  if (cfg.t_star == 0) return x01;
  Var z = add_scalar(mul_scalar(x01, 2.0), -1.0);
  Var zt = forward_sample_var(sched, z, cfg.t_star, eps);
  Var z0 = sample_chain_ddim_var(sched, denoiser, zt, cfg.t_star, 0, cfg.ddim_stride);
  return clamp01(add_scalar(mul_scalar(z0, 0.5), 0.5));
}

// (+P) composition: purify then classify.
inline std::vector<std::size_t> protected_predict(const ClassifierParams& classifier, const PurifyConfig& cfg,
                                                  const DenoiserParams& denoiser, const NoiseSchedule& sched,
                                                  const Tensor& x, RandomSource& rng) {
  return classify(classifier, purify(cfg, denoiser, sched, x, rng));
}

}  // namespace scorelab
