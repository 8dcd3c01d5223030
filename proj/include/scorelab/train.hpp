#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "scorelab/dataset.hpp"
#include "scorelab/nn.hpp"

namespace scorelab {

// Adam over a ParamStore; moment buffers keyed by parameter order.
class Adam {
 public:
  Adam(ParamStore& store, const TrainConfig& cfg) : store_(store), cfg_(cfg) {
    for (const auto& [name, t] : store.items()) {
      m_.push_back(Tensor::zeros(t.shape()));
      v_.push_back(Tensor::zeros(t.shape()));
    }
  }

  void step(const LiftedParams& lifted) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    std::size_t i = 0;
    for (auto& [name, param] : store_.items()) {
      const Var& var = lifted.at(name);
      if (!var->grad.empty()) {
        const Tensor& g = var->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < param.numel(); ++k) {
          m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g[k];
          v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g[k] * g[k];
          param[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        }
      }
      ++i;
    }
  }

 private:
  ParamStore& store_;
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

namespace detail {

// Shared epoch driver: shuffles, forms batches, calls `step(batch_indices)`
// which returns the batch loss, and enforces the >= 50% loss-decline contract.
inline std::vector<double> run_epochs(std::size_t num_samples, const TrainConfig& cfg, const std::string& what,
                                      const std::function<double(const std::vector<std::size_t>&)>& step,
                                      bool verbose) {
  RandomSource shuffle_rng(cfg.seed, 0x5F001);
  std::vector<double> epoch_means;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(num_samples, shuffle_rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < num_samples; start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(num_samples, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      double loss = step(batch);
      if (!std::isfinite(loss)) throw NumericError(what + " training diverged (non-finite loss)");
      loss_sum += loss;
      ++batches;
    }
    epoch_means.push_back(loss_sum / static_cast<double>(batches));
    if (verbose)
      std::cerr << "[train] " << what << " epoch " << epoch + 1 << "/" << cfg.epochs << " loss "
                << epoch_means.back() << "\n";
  }
  if (epoch_means.back() > 0.5 * epoch_means.front())
    throw NumericError(what + " training failed to cut the first-epoch loss in half (" +
                       std::to_string(epoch_means.front()) + " -> " + std::to_string(epoch_means.back()) + ")");
  return epoch_means;
}

inline Tensor gather_images(const LabeledBatch& data, const std::vector<std::size_t>& idx) {
  std::size_t dim = data.images.numel() / data.size();
  Tensor out = Tensor::zeros({idx.size(), data.images.shape()[1], data.images.shape()[2], data.images.shape()[3]});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.images.data() + idx[i] * dim, dim, out.data() + i * dim);
  return out;
}

inline std::vector<std::size_t> gather_labels(const LabeledBatch& data, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.labels[idx[i]];
  return out;
}

}  // namespace detail

struct TrainResult {
  std::vector<double> epoch_loss;
};

inline TrainResult train_classifier(ClassifierParams& p, const LabeledBatch& data, const TrainConfig& cfg,
                                    bool verbose = false) {
  cfg.validate();
  if (data.size() == 0) throw NumericError("empty training set");
  Adam opt(p.store, cfg);
  auto step = [&](const std::vector<std::size_t>& batch) {
    Tensor xb = detail::gather_images(data, batch);
    auto yb = detail::gather_labels(data, batch);
    LiftedParams lp(p.store, true);
    Var loss = cross_entropy(classifier_graph(p, lp, constant(xb)).logits, yb);
    backward(loss);
    opt.step(lp);
    return loss->value[0];
  };
  TrainResult r;
  r.epoch_loss = detail::run_epochs(data.size(), cfg, "classifier[" + p.arch + "]", step, verbose);
  p.train_config = cfg;
  return r;
}

// Noises each image to a per-image uniform timestep in [0, T] via the forward
// process, then fits cross-entropy on the noised inputs. The time classifier
// (like the denoiser) lives in the [-1,1] diffusion domain.
inline TrainResult train_time_classifier(TimeClassifierParams& p, const LabeledBatch& data,
                                         const NoiseSchedule& sched, const TrainConfig& cfg, bool verbose = false) {
  cfg.validate();
  p.check_schedule(sched);
  if (data.size() == 0) throw NumericError("empty training set");
  Adam opt(p.store, cfg);
  RandomSource noise_rng(cfg.seed, 0x7E4B5);
  auto step = [&](const std::vector<std::size_t>& batch) {
    Tensor xb = detail::gather_images(data, batch);
    auto yb = detail::gather_labels(data, batch);
    std::size_t dim = xb.numel() / batch.size();
    std::vector<int> ts(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      int t = static_cast<int>(noise_rng.uniform_index(static_cast<std::uint64_t>(sched.T) + 1));
      ts[i] = t;
      double sa = std::sqrt(sched.alpha[t]), sg = sched.sigma[t];
      double* img = xb.data() + i * dim;
      for (std::size_t k = 0; k < dim; ++k) img[k] = sa * (2.0 * img[k] - 1.0) + sg * noise_rng.gaussian();
    }
    LiftedParams lp(p.store, true);
    Var loss = cross_entropy(time_classifier_graph(p, lp, constant(xb), ts), yb);
    backward(loss);
    opt.step(lp);
    return loss->value[0];
  };
  TrainResult r;
  r.epoch_loss = detail::run_epochs(data.size(), cfg, "time-classifier", step, verbose);
  p.train_config = cfg;
  return r;
}

// Standard diffusion loss E ||eps_theta(x_t, t) - eps||^2 with t ~ U{1..T};
// images are mapped to the [-1,1] diffusion domain first.
inline TrainResult train_denoiser(DenoiserParams& p, const LabeledBatch& data, const NoiseSchedule& sched,
                                  const TrainConfig& cfg, bool verbose = false) {
  cfg.validate();
  p.check_schedule(sched);
  if (data.size() == 0) throw NumericError("empty training set");
  Adam opt(p.store, cfg);
  RandomSource noise_rng(cfg.seed, 0xD1FF5);
  auto step = [&](const std::vector<std::size_t>& batch) {
    Tensor xb = detail::gather_images(data, batch);
    std::size_t dim = xb.numel() / batch.size();
    Tensor eps = Tensor::zeros(xb.shape());
    std::vector<int> ts(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      int t = 1 + static_cast<int>(noise_rng.uniform_index(static_cast<std::uint64_t>(sched.T)));
      ts[i] = t;
      double sa = std::sqrt(sched.alpha[t]), sg = sched.sigma[t];
      double* img = xb.data() + i * dim;
      double* e = eps.data() + i * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        e[k] = noise_rng.gaussian();
        img[k] = sa * (2.0 * img[k] - 1.0) + sg * e[k];
      }
    }
    LiftedParams lp(p.store, true);
    Var pred = denoiser_graph(p, lp, constant(xb), ts);
    Var loss = mse(pred, constant(eps));
    backward(loss);
    opt.step(lp);
    return loss->value[0];
  };
  TrainResult r;
  r.epoch_loss = detail::run_epochs(data.size(), cfg, "denoiser", step, verbose);
  p.train_config = cfg;
  return r;
}

inline double classifier_accuracy(const ClassifierParams& p, const LabeledBatch& data,
                                  std::size_t eval_batch = 128) {
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += eval_batch) {
    std::size_t n = std::min(eval_batch, data.size() - start);
    auto pred = classify(p, data.images.slice0(start, n));
    for (std::size_t i = 0; i < n; ++i)
      if (pred[i] == data.labels[start + i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Accuracy of the time classifier on [0,1] inputs noised to a fixed t in the
// diffusion domain.
inline double time_classifier_accuracy(const TimeClassifierParams& p, const NoiseSchedule& sched,
                                       const LabeledBatch& data, int t, std::uint64_t seed,
                                       std::size_t eval_batch = 128) {
  p.check_schedule(sched);
  RandomSource rng(seed, 0xACC);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += eval_batch) {
    std::size_t n = std::min(eval_batch, data.size() - start);
    Tensor xb = data.images.slice0(start, n);
    double sa = std::sqrt(sched.alpha[t]), sg = sched.sigma[t];
    for (auto& v : xb.span()) v = sa * (2.0 * v - 1.0) + sg * rng.gaussian();
    auto pred = argmax_rows(time_classifier_forward(p, xb, t));
    for (std::size_t i = 0; i < n; ++i)
      if (pred[i] == data.labels[start + i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace scorelab
