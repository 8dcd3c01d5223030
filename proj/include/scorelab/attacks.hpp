#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorelab/diffusion.hpp"
#include "scorelab/nn.hpp"
#include "scorelab/purify.hpp"

namespace scorelab {

enum class Norm { Linf, L2 };

inline Norm norm_from_string(const std::string& s) {
  if (s == "linf") return Norm::Linf;
  if (s == "l2") return Norm::L2;
  throw NumericError("unknown norm: " + s);
}

inline std::string norm_to_string(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }

struct AttackConfig {
  Norm norm = Norm::Linf;
  double gamma = 0.06;  // budget in pixel units; the l2 ball radius is gamma*sqrt(N)
  double eta = 0.0075;  // step size
  int n = 10;           // iterations
  int score_t = 20;     // timestep fed to the time-dependent classifier
  std::uint64_t seed = 3407;
  bool clamp_pixels = true;

  void validate(int schedule_T) const {
    if (gamma <= 0 || eta <= 0 || n < 1) throw NumericError("attack config requires gamma > 0, eta > 0, n >= 1");
    if (score_t < 0 || score_t > schedule_T) throw NumericError("attack score_t outside [0,T]");
  }
};

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"norm", norm_to_string(c.norm)}, {"gamma", c.gamma}, {"eta", c.eta}, {"n", c.n},
       {"score_t", c.score_t},           {"seed", c.seed},   {"clamp_pixels", c.clamp_pixels}};
}

inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  c.norm = norm_from_string(j.at("norm").get<std::string>());
  j.at("gamma").get_to(c.gamma);
  j.at("eta").get_to(c.eta);
  j.at("n").get_to(c.n);
  if (j.contains("score_t")) j.at("score_t").get_to(c.score_t);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("clamp_pixels")) j.at("clamp_pixels").get_to(c.clamp_pixels);
}

struct LossTraceRow {
  int iter;
  std::optional<double> l_s, l_c, l_t;
  double wall_ms;
};

struct AttackOutcome {
  Tensor x_adv;
  Tensor delta;
  std::vector<LossTraceRow> trace;
  double wall_seconds = 0;
};

// Projection onto the l_p ball of radius `radius`, applied per image on the
// leading axis.
inline Tensor project(const Tensor& delta, Norm norm, double radius) {
  Tensor out = delta;
  if (norm == Norm::Linf) {
    for (auto& v : out.span()) v = v < -radius ? -radius : (v > radius ? radius : v);
    return out;
  }
  std::size_t B = delta.rank() > 0 ? delta.shape()[0] : 1;
  std::size_t dim = delta.numel() / B;
  for (std::size_t i = 0; i < B; ++i) {
    double* p = out.data() + i * dim;
    double norm2 = 0;
    for (std::size_t k = 0; k < dim; ++k) norm2 += p[k] * p[k];
    double nrm = std::sqrt(norm2);
    if (nrm > radius) {
      double scale = radius / nrm;
      for (std::size_t k = 0; k < dim; ++k) p[k] *= scale;
    }
  }
  return out;
}

namespace detail {

inline double resolved_radius(const AttackConfig& cfg, std::size_t per_image_dim) {
  return cfg.norm == Norm::L2 ? cfg.gamma * std::sqrt(static_cast<double>(per_image_dim)) : cfg.gamma;
}

// Per-image noise for PGD iteration `iter`: image i draws from its own
// counter-based stream, so draws are independent of batch composition and of
// whatever else the attack evaluates.
inline Tensor iteration_noise(std::uint64_t seed, int iter, const Shape& shape) {
  std::size_t B = shape[0];
  std::size_t dim = shape_numel(shape) / B;
  Tensor eps = Tensor::zeros(shape);
  RandomSource base(seed, 0xA77AC);
  for (std::size_t i = 0; i < B; ++i) {
    RandomSource r = base.substream(i);
    r.set_counter(static_cast<std::uint64_t>(iter) * 2 * dim);
    double* p = eps.data() + i * dim;
    for (std::size_t k = 0; k < dim; ++k) p[k] = r.gaussian();
  }
  return eps;
}

inline void step_project_clamp(Tensor& delta, const Tensor& grad, const Tensor& x, const AttackConfig& cfg,
                               double radius) {
  for (std::size_t k = 0; k < delta.numel(); ++k) {
    double g = grad.empty() ? 0.0 : grad[k];
    delta[k] += cfg.eta * (g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0));
  }
  delta = project(delta, cfg.norm, radius);
  if (cfg.clamp_pixels) {
    for (std::size_t k = 0; k < delta.numel(); ++k) {
      double v = x[k] + delta[k];
      delta[k] = (v < 0 ? 0.0 : (v > 1 ? 1.0 : v)) - x[k];
    }
  }
}

// Score loss graph on a [0,1]-domain adversarial iterate: map to the
// diffusion domain, noise to timestep t with the given eps, and take the
// batch-mean log-probability of the true labels.
inline Var score_loss_graph(const TimeClassifierParams& time_cls, const NoiseSchedule& sched, const Var& x_adv01,
                            const std::vector<std::size_t>& labels, int t, const Tensor& eps) {
  Var z = add_scalar(mul_scalar(x_adv01, 2.0), -1.0);
  Var x_t = forward_sample_var(sched, z, t, eps);
  Var logits = time_classifier_graph(time_cls, LiftedParams(time_cls.store, false), x_t,
                                     std::vector<int>(labels.size(), t));
  return mean(gather_rows(log_softmax(logits), labels));
}

// One PGD family engine. The three published attacks are instances of this
// loop with loss terms toggled, which is what makes the degenerate
// equivalences exact rather than approximate.
inline AttackOutcome pgd_engine(const ClassifierParams* victim, const TimeClassifierParams* time_cls,
                                const NoiseSchedule* sched, const Tensor& x, const std::vector<std::size_t>& y,
                                const AttackConfig& cfg) {
  if (x.rank() != 4 || x.shape()[0] != y.size()) throw NumericError("attack input/label mismatch");
  cfg.validate(sched ? sched->T : cfg.score_t);
  if (time_cls) {
    if (!sched) throw NumericError("score loss requires a noise schedule");
    time_cls->check_schedule(*sched);
  }
  std::size_t dim = x.numel() / x.shape()[0];
  double radius = resolved_radius(cfg, dim);

  AttackOutcome out;
  out.delta = Tensor::zeros(x.shape());
  auto attack_start = std::chrono::steady_clock::now();
  for (int iter = 0; iter < cfg.n; ++iter) {
    auto iter_start = std::chrono::steady_clock::now();
    Var dv = variable(out.delta);
    Var x_adv = add(constant(x), dv);

    LossTraceRow row{iter, std::nullopt, std::nullopt, std::nullopt, 0};
    Var objective;  // the quantity ascended by the sign-gradient step
    if (victim) {
      Var l_c = cross_entropy(classifier_graph(*victim, LiftedParams(victim->store, false), x_adv).logits, y);
      row.l_c = l_c->value[0];
      objective = l_c;
    }
    if (time_cls) {
      Tensor eps = iteration_noise(cfg.seed, iter, x.shape());
      Var l_s = score_loss_graph(*time_cls, *sched, x_adv, y, cfg.score_t, eps);
      row.l_s = l_s->value[0];
      objective = objective ? sub(objective, l_s) : neg(l_s);
    }
    row.l_t = objective->value[0];
    backward(objective);
    step_project_clamp(out.delta, dv->grad, x, cfg, radius);
    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - iter_start).count();
    out.trace.push_back(row);
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - attack_start).count();
  out.x_adv = t_add(x, out.delta);
  return out;
}

}  // namespace detail

struct ScoreLossResult {
  double value;
  Tensor grad;  // w.r.t. the [0,1]-domain input
  Tensor eps;
};

// L_s = mean log f_phi(x_adv^t, t)[y] with frozen noise.
inline ScoreLossResult score_loss_with_eps(const TimeClassifierParams& time_cls, const NoiseSchedule& sched,
                                           const Tensor& x_adv, const std::vector<std::size_t>& y, int t,
                                           const Tensor& eps) {
  time_cls.check_schedule(sched);
  sched.check_t(t);
  Var xv = variable(x_adv);
  Var l_s = detail::score_loss_graph(time_cls, sched, xv, y, t, eps);
  backward(l_s);
  return {l_s->value[0], xv->grad.empty() ? Tensor::zeros(x_adv.shape()) : xv->grad, eps};
}

// Same with a fresh eps ~ N(0,I) drawn per call, as in the attack loop.
inline ScoreLossResult score_loss(const TimeClassifierParams& time_cls, const NoiseSchedule& sched,
                                  const Tensor& x_adv, const std::vector<std::size_t>& y, int t,
                                  RandomSource& rng) {
  return score_loss_with_eps(time_cls, sched, x_adv, y, t, rng.gaussian_tensor(x_adv.shape()));
}

// Projected sign-gradient ascent on the victim's cross-entropy (white-box).
inline AttackOutcome pgd(const ClassifierParams& victim, const Tensor& x, const std::vector<std::size_t>& y,
                         const AttackConfig& cfg) {
  return detail::pgd_engine(&victim, nullptr, nullptr, x, y, cfg);
}

// ScorePGD: descends the time-dependent classifier's log-probability of the
// true label on freshly noised iterates. Takes no victim parameters at all.
inline AttackOutcome score_pgd(const TimeClassifierParams& time_cls, const NoiseSchedule& sched, const Tensor& x,
                               const std::vector<std::size_t>& y, const AttackConfig& cfg) {
  return detail::pgd_engine(nullptr, &time_cls, &sched, x, y, cfg);
}

// U-ScorePGD: single sign-gradient step on L_t = L_c - L_s per iteration.
// The term toggles exist for the degenerate-equivalence checks.
inline AttackOutcome u_score_pgd(const ClassifierParams& victim, const TimeClassifierParams& time_cls,
                                 const NoiseSchedule& sched, const Tensor& x, const std::vector<std::size_t>& y,
                                 const AttackConfig& cfg, bool use_task = true, bool use_score = true) {
  if (!use_task && !use_score) throw NumericError("u_score_pgd requires at least one loss term");
  return detail::pgd_engine(use_task ? &victim : nullptr, use_score ? &time_cls : nullptr, &sched, x, y, cfg);
}

// Reference baseline for the runtime comparison: PGD that backpropagates the
// task loss through a differentiable DDIM purifier each iteration.
inline AttackOutcome purifier_in_loop_pgd(const ClassifierParams& victim, const PurifyConfig& purify_cfg,
                                          const DenoiserParams& denoiser, const NoiseSchedule& sched,
                                          const Tensor& x, const std::vector<std::size_t>& y,
                                          const AttackConfig& cfg) {
  if (x.rank() != 4 || x.shape()[0] != y.size()) throw NumericError("attack input/label mismatch");
  cfg.validate(sched.T);
  purify_cfg.validate(sched);
  denoiser.check_schedule(sched);
  std::size_t dim = x.numel() / x.shape()[0];
  double radius = detail::resolved_radius(cfg, dim);

  AttackOutcome out;
  out.delta = Tensor::zeros(x.shape());
  auto attack_start = std::chrono::steady_clock::now();
  for (int iter = 0; iter < cfg.n; ++iter) {
    auto iter_start = std::chrono::steady_clock::now();
    Var dv = variable(out.delta);
    Var x_adv = add(constant(x), dv);
    Tensor eps = detail::iteration_noise(cfg.seed, iter, x.shape());
    Var purified = purify_graph(purify_cfg, denoiser, sched, x_adv, eps);
    Var l_c = cross_entropy(classifier_graph(victim, LiftedParams(victim.store, false), purified).logits, y);
    backward(l_c);
    detail::step_project_clamp(out.delta, dv->grad, x, cfg, radius);
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - iter_start).count();
    out.trace.push_back({iter, std::nullopt, l_c->value[0], l_c->value[0], ms});
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - attack_start).count();
  out.x_adv = t_add(x, out.delta);
  return out;
}

// Outcome directory: config JSON, adversarial and perturbation tensor blocks,
// and the per-iteration loss trace.
inline void save_outcome(const std::filesystem::path& dir, const nlohmann::json& config,
                         const AttackOutcome& outcome) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "config.json");
    if (!os) throw ArtifactError("cannot write " + (dir / "config.json").string());
    os << config.dump(2) << "\n";
  }
  save_tensor_file(dir / "x_adv.tns", outcome.x_adv);
  save_tensor_file(dir / "delta.tns", outcome.delta);
  std::ofstream csv(dir / "loss_trace.csv");
  if (!csv) throw ArtifactError("cannot write " + (dir / "loss_trace.csv").string());
  csv << "iter,L_s,L_c,L_t,wall_ms\n";
  auto field = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& r : outcome.trace)
    csv << r.iter << "," << field(r.l_s) << "," << field(r.l_c) << "," << field(r.l_t) << "," << r.wall_ms << "\n";
}

}  // namespace scorelab
