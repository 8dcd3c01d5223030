#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorelab/autodiff.hpp"
#include "scorelab/io.hpp"
#include "scorelab/random.hpp"
#include "scorelab/schedule.hpp"

namespace scorelab {

// Ordered named-parameter container; order is the checkpoint and optimizer
// iteration order, so it must be construction-deterministic.
class ParamStore {
 public:
  void add(std::string name, Tensor t) {
    index_[name] = items_.size();
    items_.emplace_back(std::move(name), std::move(t));
  }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArtifactError("missing parameter: " + name);
    return items_[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArtifactError("missing parameter: " + name);
    return items_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  bool all_finite() const {
    for (const auto& [n, t] : items_)
      if (!t.all_finite()) return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameters lifted onto the tape. Lift with gradients for training, without
// for attack/evaluation forwards.
class LiftedParams {
 public:
  LiftedParams(const ParamStore& store, bool requires_grad) {
    for (const auto& [name, t] : store.items()) vars_.emplace(name, make_leaf(t, requires_grad));
  }

  const Var& at(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ArtifactError("missing lifted parameter: " + name);
    return it->second;
  }

  const std::unordered_map<std::string, Var>& map() const { return vars_; }

 private:
  std::unordered_map<std::string, Var> vars_;
};

struct TrainConfig {
  int epochs = 12;
  int batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::uint64_t seed = 3407;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || lr <= 0) throw NumericError("train config requires positive hyperparameters");
    if (optimizer != "adam") throw NumericError("unknown optimizer tag: " + optimizer);
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
       {"optimizer", c.optimizer}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  j.at("seed").get_to(c.seed);
}

namespace detail {

inline Tensor he_normal(Shape shape, std::size_t fan_in, RandomSource& rng) {
  Tensor t = rng.gaussian_tensor(std::move(shape));
  double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.span()) v *= sd;
  return t;
}

inline void add_conv(ParamStore& p, const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t k,
                     RandomSource& rng) {
  p.add(name + ".w", he_normal({out_c, in_c, k, k}, in_c * k * k, rng));
  p.add(name + ".b", Tensor::zeros({out_c}));
}

inline void add_dense(ParamStore& p, const std::string& name, std::size_t in_n, std::size_t out_n,
                      RandomSource& rng) {
  p.add(name + ".w", he_normal({in_n, out_n}, in_n, rng));
  p.add(name + ".b", Tensor::zeros({out_n}));
}

inline Var conv_layer(const LiftedParams& p, const std::string& name, const Var& x, std::size_t stride,
                      std::size_t pad) {
  return add_channel_bias(conv2d(x, p.at(name + ".w"), stride, pad), p.at(name + ".b"));
}

inline Var dense_layer(const LiftedParams& p, const std::string& name, const Var& x) {
  return add_row_bias(matmul(x, p.at(name + ".w")), p.at(name + ".b"));
}

}  // namespace detail

// Sinusoidal timestep embedding, [B, dim], constant w.r.t. the tape.
inline Tensor timestep_embedding(const std::vector<int>& ts, std::size_t dim) {
  std::size_t half = dim / 2;
  Tensor e = Tensor::zeros({ts.size(), dim});
  for (std::size_t b = 0; b < ts.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      e[b * dim + i] = std::sin(ts[b] * freq);
      e[b * dim + half + i] = std::cos(ts[b] * freq);
    }
  return e;
}

// ---------------------------------------------------------------------------
// Victim classifiers: conv-small and mlp, sharing the checkpoint machinery.
// ---------------------------------------------------------------------------

struct ClassifierParams {
  std::string arch;  // "conv_small" | "mlp"
  int num_classes = 0;
  int channels = 1;
  int resolution = 16;
  ParamStore store;
  nlohmann::json train_config;
};

inline ClassifierParams init_classifier(const std::string& arch, int num_classes, int channels, int resolution,
                                        std::uint64_t seed) {
  ClassifierParams p;
  p.arch = arch;
  p.num_classes = num_classes;
  p.channels = channels;
  p.resolution = resolution;
  RandomSource rng(seed, 0xC1A55);
  std::size_t C = static_cast<std::size_t>(channels);
  std::size_t K = static_cast<std::size_t>(num_classes);
  std::size_t R = static_cast<std::size_t>(resolution);
  if (arch == "conv_small") {
    detail::add_conv(p.store, "c1", C, 8, 3, rng);
    detail::add_conv(p.store, "c2", 8, 16, 3, rng);
    detail::add_conv(p.store, "c3", 16, 32, 3, rng);
    std::size_t flat = 32 * (R / 4) * (R / 4);
    detail::add_dense(p.store, "d1", flat, 64, rng);
    detail::add_dense(p.store, "out", 64, K, rng);
  } else if (arch == "mlp") {
    std::size_t flat = C * R * R;
    detail::add_dense(p.store, "d1", flat, 128, rng);
    detail::add_dense(p.store, "d2", 128, 64, rng);
    detail::add_dense(p.store, "out", 64, K, rng);
  } else {
    throw NumericError("unknown classifier architecture: " + arch);
  }
  return p;
}

struct ClassifierGraph {
  Var logits;
  Var features;  // penultimate activations
};

inline ClassifierGraph classifier_graph(const ClassifierParams& p, const LiftedParams& lp, const Var& x) {
  const Tensor& X = x->value;
  if (X.rank() != 4 || X.shape()[1] != static_cast<std::size_t>(p.channels) ||
      X.shape()[2] != static_cast<std::size_t>(p.resolution) || X.shape()[3] != static_cast<std::size_t>(p.resolution))
    throw NumericError("classifier input shape mismatch: got " + shape_str(X.shape()));
  std::size_t B = X.shape()[0];
  Var feat;
  if (p.arch == "conv_small") {
    Var h = relu(detail::conv_layer(lp, "c1", x, 1, 1));
    h = relu(detail::conv_layer(lp, "c2", h, 2, 1));
    h = relu(detail::conv_layer(lp, "c3", h, 2, 1));
    h = reshape(h, {B, h->value.numel() / B});
    feat = relu(detail::dense_layer(lp, "d1", h));
  } else {
    Var h = reshape(x, {B, X.numel() / B});
    h = relu(detail::dense_layer(lp, "d1", h));
    feat = relu(detail::dense_layer(lp, "d2", h));
  }
  return {detail::dense_layer(lp, "out", feat), feat};
}

inline Var classifier_forward_var(const ClassifierParams& p, const Var& x) {
  LiftedParams lp(p.store, false);
  return classifier_graph(p, lp, x).logits;
}

inline Tensor classifier_forward(const ClassifierParams& p, const Tensor& x) {
  return classifier_forward_var(p, constant(x))->value;
}

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::size_t B = logits.shape()[0], K = logits.shape()[1];
  std::vector<std::size_t> out(B);
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < K; ++j)
      if (logits[i * K + j] > logits[i * K + arg]) arg = j;
    out[i] = arg;
  }
  return out;
}

inline std::vector<std::size_t> classify(const ClassifierParams& p, const Tensor& x) {
  return argmax_rows(classifier_forward(p, x));
}

// ---------------------------------------------------------------------------
// Time-dependent classifier f_phi(x_t, t).
// ---------------------------------------------------------------------------

struct TimeClassifierParams {
  int num_classes = 0;
  int channels = 1;
  int resolution = 16;
  int embed_dim = 32;
  int hidden = 64;
  int schedule_T = 0;
  std::uint64_t schedule_fingerprint = 0;
  ParamStore store;
  nlohmann::json train_config;

  void check_schedule(const NoiseSchedule& s) const {
    if (s.fingerprint() != schedule_fingerprint)
      throw FingerprintError("time-classifier was trained on a different noise schedule");
  }
};

inline TimeClassifierParams init_time_classifier(int num_classes, int channels, int resolution,
                                                 const NoiseSchedule& sched, std::uint64_t seed) {
  TimeClassifierParams p;
  p.num_classes = num_classes;
  p.channels = channels;
  p.resolution = resolution;
  p.schedule_T = sched.T;
  p.schedule_fingerprint = sched.fingerprint();
  RandomSource rng(seed, 0x71C15);
  std::size_t C = static_cast<std::size_t>(channels);
  std::size_t R = static_cast<std::size_t>(resolution);
  detail::add_conv(p.store, "c1", C, 12, 3, rng);
  detail::add_conv(p.store, "c2", 12, 24, 3, rng);
  detail::add_conv(p.store, "c3", 24, 32, 3, rng);
  std::size_t flat = 32 * (R / 4) * (R / 4);
  detail::add_dense(p.store, "d1", flat, static_cast<std::size_t>(p.hidden), rng);
  detail::add_dense(p.store, "temb", static_cast<std::size_t>(p.embed_dim), static_cast<std::size_t>(p.hidden), rng);
  detail::add_dense(p.store, "out", static_cast<std::size_t>(p.hidden), static_cast<std::size_t>(num_classes), rng);
  return p;
}

inline Var time_classifier_graph(const TimeClassifierParams& p, const LiftedParams& lp, const Var& x_t,
                                 const std::vector<int>& ts) {
  const Tensor& X = x_t->value;
  if (X.rank() != 4 || X.shape()[0] != ts.size()) throw NumericError("time-classifier input/timestep mismatch");
  for (int t : ts)
    if (t < 0 || t > p.schedule_T)
      throw NumericError("timestep " + std::to_string(t) + " outside trained range [0," +
                         std::to_string(p.schedule_T) + "]");
  std::size_t B = X.shape()[0];
  Var h = silu(detail::conv_layer(lp, "c1", x_t, 1, 1));
  h = silu(detail::conv_layer(lp, "c2", h, 2, 1));
  h = silu(detail::conv_layer(lp, "c3", h, 2, 1));
  h = reshape(h, {B, h->value.numel() / B});
  Var emb = constant(timestep_embedding(ts, static_cast<std::size_t>(p.embed_dim)));
  Var tproj = detail::dense_layer(lp, "temb", emb);
  h = silu(add(detail::dense_layer(lp, "d1", h), tproj));
  return detail::dense_layer(lp, "out", h);
}

inline Var time_classifier_forward_var(const TimeClassifierParams& p, const Var& x_t, int t) {
  LiftedParams lp(p.store, false);
  std::vector<int> ts(x_t->value.shape()[0], t);
  return time_classifier_graph(p, lp, x_t, ts);
}

inline Tensor time_classifier_forward(const TimeClassifierParams& p, const Tensor& x_t, int t) {
  return time_classifier_forward_var(p, constant(x_t), t)->value;
}

// ---------------------------------------------------------------------------
// Denoiser eps_theta(x_t, t): small U-shaped conv net, 2 down / 2 up stages
// with skip connections and a timestep bias at the bottleneck.
// ---------------------------------------------------------------------------

struct DenoiserParams {
  int channels = 1;
  int resolution = 16;
  int base_width = 8;
  int embed_dim = 32;
  int schedule_T = 0;
  std::uint64_t schedule_fingerprint = 0;
  ParamStore store;
  nlohmann::json train_config;

  void check_schedule(const NoiseSchedule& s) const {
    if (s.fingerprint() != schedule_fingerprint)
      throw FingerprintError("denoiser was trained on a different noise schedule");
  }
};

inline DenoiserParams init_denoiser(int channels, int resolution, const NoiseSchedule& sched, std::uint64_t seed,
                                    int base_width = 8) {
  if (resolution % 4 != 0) throw NumericError("denoiser requires resolution divisible by 4");
  DenoiserParams p;
  p.channels = channels;
  p.resolution = resolution;
  p.base_width = base_width;
  p.schedule_T = sched.T;
  p.schedule_fingerprint = sched.fingerprint();
  RandomSource rng(seed, 0xDE401);
  std::size_t C = static_cast<std::size_t>(channels);
  std::size_t W = static_cast<std::size_t>(base_width);
  detail::add_conv(p.store, "e0", C, W, 3, rng);
  detail::add_conv(p.store, "e1", W, 2 * W, 3, rng);
  detail::add_conv(p.store, "e2", 2 * W, 4 * W, 3, rng);
  detail::add_conv(p.store, "mid", 4 * W, 4 * W, 3, rng);
  detail::add_dense(p.store, "temb", static_cast<std::size_t>(p.embed_dim), 4 * W, rng);
  detail::add_conv(p.store, "u1", 4 * W + 2 * W, 2 * W, 3, rng);
  detail::add_conv(p.store, "u2", 2 * W + W, W, 3, rng);
  detail::add_conv(p.store, "out", W, C, 3, rng);
  return p;
}

inline Var denoiser_graph(const DenoiserParams& p, const LiftedParams& lp, const Var& x_t,
                          const std::vector<int>& ts) {
  const Tensor& X = x_t->value;
  if (X.rank() != 4 || X.shape()[0] != ts.size() || X.shape()[1] != static_cast<std::size_t>(p.channels))
    throw NumericError("denoiser input shape mismatch: got " + shape_str(X.shape()));
  for (int t : ts)
    if (t < 0 || t > p.schedule_T) throw NumericError("denoiser timestep outside trained range");
  Var e0 = silu(detail::conv_layer(lp, "e0", x_t, 1, 1));
  Var e1 = silu(detail::conv_layer(lp, "e1", e0, 2, 1));
  Var e2 = silu(detail::conv_layer(lp, "e2", e1, 2, 1));
  Var emb = constant(timestep_embedding(ts, static_cast<std::size_t>(p.embed_dim)));
  Var tbias = detail::dense_layer(lp, "temb", emb);
  Var m = silu(add_channel_bias_per_image(detail::conv_layer(lp, "mid", e2, 1, 1), tbias));
  Var u1 = silu(detail::conv_layer(lp, "u1", concat_channels(upsample_nearest2(m), e1), 1, 1));
  Var u2 = silu(detail::conv_layer(lp, "u2", concat_channels(upsample_nearest2(u1), e0), 1, 1));
  return detail::conv_layer(lp, "out", u2, 1, 1);
}

inline Var denoiser_forward_var(const DenoiserParams& p, const Var& x_t, int t) {
  LiftedParams lp(p.store, false);
  std::vector<int> ts(x_t->value.shape()[0], t);
  return denoiser_graph(p, lp, x_t, ts);
}

inline Tensor denoiser_forward(const DenoiserParams& p, const Tensor& x_t, int t) {
  return denoiser_forward_var(p, constant(x_t), t)->value;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "SCKP", version, JSON metadata header, named tensor blocks.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                             const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot open for writing: " + path.string());
  io::write_bytes(os, "SCKP", 4);
  io::write_le<std::uint8_t>(os, 1);
  io::write_string(os, header.dump());
  io::write_le<std::uint64_t>(os, store.size());
  for (const auto& [name, t] : store.items()) {
    io::write_string(os, name);
    write_tensor(os, t);
  }
}

inline std::pair<nlohmann::json, ParamStore> read_checkpoint(const std::filesystem::path& path,
                                                             const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("missing checkpoint file: " + path.string());
  char magic[4];
  io::read_bytes(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, "SCKP", 4) != 0) throw ArtifactError("bad checkpoint magic in " + path.string());
  auto version = io::read_le<std::uint8_t>(is, "checkpoint version");
  if (version != 1) throw ArtifactError("unsupported checkpoint version");
  nlohmann::json header = nlohmann::json::parse(io::read_string(is, "checkpoint header"), nullptr, false);
  if (header.is_discarded()) throw ArtifactError("corrupt checkpoint header JSON");
  std::string kind = header.value("kind", "");
  if (kind != expected_kind)
    throw ArtifactError("checkpoint kind mismatch: expected " + expected_kind + ", found " + kind + " in " +
                        path.string());
  auto count = io::read_le<std::uint64_t>(is, "checkpoint tensor count");
  ParamStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is, "checkpoint tensor name");
    store.add(std::move(name), read_tensor(is));
  }
  if (!store.all_finite()) throw NumericError("non-finite parameter in checkpoint " + path.string());
  return {header, store};
}

}  // namespace detail

inline void save_classifier(const std::filesystem::path& path, const ClassifierParams& p) {
  nlohmann::json h = {{"kind", "classifier"}, {"arch", p.arch},       {"num_classes", p.num_classes},
                      {"channels", p.channels}, {"resolution", p.resolution}, {"train_config", p.train_config}};
  detail::write_checkpoint(path, h, p.store);
}

inline ClassifierParams load_classifier(const std::filesystem::path& path) {
  auto [h, store] = detail::read_checkpoint(path, "classifier");
  ClassifierParams p;
  p.arch = h.at("arch");
  p.num_classes = h.at("num_classes");
  p.channels = h.at("channels");
  p.resolution = h.at("resolution");
  p.train_config = h.value("train_config", nlohmann::json::object());
  p.store = std::move(store);
  return p;
}

inline void save_time_classifier(const std::filesystem::path& path, const TimeClassifierParams& p) {
  nlohmann::json h = {{"kind", "time_classifier"},
                      {"num_classes", p.num_classes},
                      {"channels", p.channels},
                      {"resolution", p.resolution},
                      {"embed_dim", p.embed_dim},
                      {"hidden", p.hidden},
                      {"schedule_T", p.schedule_T},
                      {"schedule_fingerprint", p.schedule_fingerprint},
                      {"train_config", p.train_config}};
  detail::write_checkpoint(path, h, p.store);
}

inline TimeClassifierParams load_time_classifier(const std::filesystem::path& path) {
  auto [h, store] = detail::read_checkpoint(path, "time_classifier");
  TimeClassifierParams p;
  p.num_classes = h.at("num_classes");
  p.channels = h.at("channels");
  p.resolution = h.at("resolution");
  p.embed_dim = h.at("embed_dim");
  p.hidden = h.at("hidden");
  p.schedule_T = h.at("schedule_T");
  p.schedule_fingerprint = h.at("schedule_fingerprint");
  p.train_config = h.value("train_config", nlohmann::json::object());
  p.store = std::move(store);
  return p;
}

inline void save_denoiser(const std::filesystem::path& path, const DenoiserParams& p) {
  nlohmann::json h = {{"kind", "denoiser"},
                      {"channels", p.channels},
                      {"resolution", p.resolution},
                      {"base_width", p.base_width},
                      {"embed_dim", p.embed_dim},
                      {"schedule_T", p.schedule_T},
                      {"schedule_fingerprint", p.schedule_fingerprint},
                      {"train_config", p.train_config}};
  detail::write_checkpoint(path, h, p.store);
}

inline DenoiserParams load_denoiser(const std::filesystem::path& path) {
  auto [h, store] = detail::read_checkpoint(path, "denoiser");
  DenoiserParams p;
  p.channels = h.at("channels");
  p.resolution = h.at("resolution");
  p.base_width = h.at("base_width");
  p.embed_dim = h.at("embed_dim");
  p.schedule_T = h.at("schedule_T");
  p.schedule_fingerprint = h.at("schedule_fingerprint");
  p.train_config = h.value("train_config", nlohmann::json::object());
  p.store = std::move(store);
  return p;
}

}  // namespace scorelab
