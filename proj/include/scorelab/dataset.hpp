#pragma once

#include <cfenv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorelab/io.hpp"
#include "scorelab/random.hpp"
#include "scorelab/tensor.hpp"

namespace scorelab {

struct DatasetSpec {
  int num_classes = 8;
  int resolution = 16;
  int channels = 1;
  int samples_per_class = 400;
  std::uint64_t seed = 3407;

  void validate() const {
    if (num_classes < 2 || num_classes > 16) throw NumericError("num_classes must be in [2,16]");
    if (resolution < 8) throw NumericError("resolution must be >= 8");
    if (channels != 1 && channels != 3) throw NumericError("channels must be 1 or 3");
    if (samples_per_class < 1) throw NumericError("samples_per_class must be positive");
  }
};

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"num_classes", s.num_classes},
       {"resolution", s.resolution},
       {"channels", s.channels},
       {"samples_per_class", s.samples_per_class},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  j.at("num_classes").get_to(s.num_classes);
  j.at("resolution").get_to(s.resolution);
  j.at("channels").get_to(s.channels);
  j.at("samples_per_class").get_to(s.samples_per_class);
  j.at("seed").get_to(s.seed);
}

struct LabeledBatch {
  Tensor images;  // [B,C,H,W], values in [0,1]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }

  LabeledBatch head(std::size_t n) const {
    n = std::min(n, size());
    return {images.slice0(0, n), {labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)}};
  }

  void validate(std::size_t num_classes) const {
    if (images.rank() != 4 || images.shape()[0] != labels.size()) throw NumericError("inconsistent batch extents");
    for (double v : images.span())
      if (v < 0.0 || v > 1.0) throw NumericError("pixel outside [0,1]");
    for (std::size_t y : labels)
      if (y >= num_classes) throw NumericError("label out of range");
  }
};

namespace detail {

constexpr int kNumShapeFamilies = 16;

// One randomized instance of a shape family rendered into [res x res].
inline void render_family(int family, int res, RandomSource& rng, std::vector<double>& img) {
  double r = static_cast<double>(res);
  double cx = rng.uniform(0.35, 0.65) * r;
  double cy = rng.uniform(0.35, 0.65) * r;
  double rad = rng.uniform(0.24, 0.40) * r;
  double fg = rng.uniform(0.60, 0.95);
  double bg = rng.uniform(0.05, 0.25);
  int period = 2 + static_cast<int>(rng.uniform_index(3));  // 2..4
  int phase = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(period * 2)));
  double w = std::max(1.0, rad * 0.35);

  img.assign(static_cast<std::size_t>(res * res), bg);
  auto px = [&](int y, int x) -> double& { return img[static_cast<std::size_t>(y * res + x)]; };

  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      double d = std::sqrt(dx * dx + dy * dy);
      bool on = false;
      switch (family) {
        case 0: on = d <= rad; break;                                             // disk
        case 1: on = std::abs(dx) <= rad * 0.85 && std::abs(dy) <= rad * 0.85; break;  // square
        case 2:                                                                   // plus cross
          on = (std::abs(dx) <= w * 0.7 && std::abs(dy) <= rad) || (std::abs(dy) <= w * 0.7 && std::abs(dx) <= rad);
          break;
        case 3: on = ((y + phase) / period) % 2 == 0; break;                      // horizontal stripes
        case 4: on = ((x + phase) / period) % 2 == 0; break;                      // vertical stripes
        case 5: on = ((x + y + phase) / period) % 2 == 0; break;                  // diagonal stripes
        case 6: on = d <= rad && d >= rad * 0.55; break;                          // ring
        case 7: on = (((x + phase) / period) + ((y + phase) / period)) % 2 == 0; break;  // checkerboard
        case 8: on = dy >= -rad && dy <= rad && std::abs(dx) <= (rad - dy) * 0.5; break;  // triangle
        case 9:                                                                   // diagonal cross
          on = d <= rad && (std::abs(dx - dy) <= w || std::abs(dx + dy) <= w);
          break;
        case 10: {                                                                // hollow frame
          double m = std::max(std::abs(dx), std::abs(dy));
          on = m <= rad * 0.9 && m >= rad * 0.55;
          break;
        }
        case 11: {                                                                // dot grid
          int p = period + 2;
          int mx = (x + phase) % p, my = (y + phase) % p;
          on = mx < 2 && my < 2;
          break;
        }
        case 12: on = dx <= 0; break;                                             // half plane (vertical edge)
        case 13:                                                                  // L shape
          on = (std::abs(dx + rad * 0.5) <= w * 0.8 && dy <= rad && dy >= -rad) ||
               (std::abs(dy - rad * 0.8) <= w * 0.8 && dx >= -rad * 0.5 && dx <= rad);
          break;
        case 14: {                                                                // two dots
          double d1 = std::hypot(dx - rad * 0.6, dy), d2 = std::hypot(dx + rad * 0.6, dy);
          on = d1 <= rad * 0.4 || d2 <= rad * 0.4;
          break;
        }
        case 15: {                                                                // soft blob
          double s = rad * 0.55;
          px(y, x) = bg + (fg - bg) * std::exp(-(d * d) / (2 * s * s));
          continue;
        }
        default: break;
      }
      if (on) px(y, x) = fg;
    }
  }
}

}  // namespace detail

// Procedural class-conditional toy images: distinct shape families randomized
// in position/scale/intensity plus additive pixel noise, clamped to [0,1].
// A pure function of the spec; 80/20 train/test split per class.
inline std::pair<LabeledBatch, LabeledBatch> generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.num_classes > detail::kNumShapeFamilies)
    throw NumericError("num_classes exceeds available shape families (" +
                       std::to_string(detail::kNumShapeFamilies) + ")");

  const int res = spec.resolution;
  const int C = spec.channels;
  const std::size_t per_class = static_cast<std::size_t>(spec.samples_per_class);
  const std::size_t total = per_class * static_cast<std::size_t>(spec.num_classes);
  const std::size_t img_elems = static_cast<std::size_t>(C * res * res);
  const double noise_sd = 0.05;

  Tensor all = Tensor::zeros({total, static_cast<std::size_t>(C), static_cast<std::size_t>(res),
                              static_cast<std::size_t>(res)});
  std::vector<std::size_t> labels(total);
  std::vector<double> plane;

  RandomSource base(spec.seed, 0);
  std::size_t idx = 0;
  for (int k = 0; k < spec.num_classes; ++k) {
    for (std::size_t s = 0; s < per_class; ++s, ++idx) {
      RandomSource rng = base.substream(idx);
      detail::render_family(k, res, rng, plane);
      double* out = all.data() + idx * img_elems;
      for (int c = 0; c < C; ++c) {
        double tint = C == 1 ? 1.0 : rng.uniform(0.7, 1.0);
        for (std::size_t p = 0; p < static_cast<std::size_t>(res * res); ++p) {
          double v = plane[p] * tint + noise_sd * rng.gaussian();
          out[static_cast<std::size_t>(c) * res * res + p] = v < 0 ? 0 : (v > 1 ? 1 : v);
        }
      }
      labels[idx] = static_cast<std::size_t>(k);
    }
  }

  // 80/20 split per class, then a deterministic shuffle of each side.
  std::size_t train_per_class = (per_class * 8) / 10;
  std::vector<std::size_t> train_idx, test_idx;
  for (int k = 0; k < spec.num_classes; ++k) {
    std::size_t off = static_cast<std::size_t>(k) * per_class;
    for (std::size_t s = 0; s < per_class; ++s)
      (s < train_per_class ? train_idx : test_idx).push_back(off + s);
  }
  RandomSource shuffle_rng(spec.seed, 0xC0FFEE);
  auto perm_train = shuffled_indices(train_idx.size(), shuffle_rng);
  auto perm_test = shuffled_indices(test_idx.size(), shuffle_rng);

  auto collect = [&](const std::vector<std::size_t>& src, const std::vector<std::size_t>& perm) {
    LabeledBatch b;
    b.images = Tensor::zeros({src.size(), static_cast<std::size_t>(C), static_cast<std::size_t>(res),
                              static_cast<std::size_t>(res)});
    b.labels.resize(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::size_t j = src[perm[i]];
      std::copy_n(all.data() + j * img_elems, img_elems, b.images.data() + i * img_elems);
      b.labels[i] = labels[j];
    }
    return b;
  };
  return {collect(train_idx, perm_train), collect(test_idx, perm_test)};
}

// Dataset file: length-prefixed UTF-8 JSON spec header + images and labels
// tensor blocks.
inline void save_dataset(const std::filesystem::path& path, const DatasetSpec& spec, const LabeledBatch& train,
                         const LabeledBatch& test) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot open for writing: " + path.string());
  io::write_string(os, nlohmann::json(spec).dump());
  write_tensor(os, train.images);
  Tensor train_labels = Tensor::zeros({train.labels.size()});
  for (std::size_t i = 0; i < train.labels.size(); ++i) train_labels[i] = static_cast<double>(train.labels[i]);
  write_tensor(os, train_labels);
  write_tensor(os, test.images);
  Tensor test_labels = Tensor::zeros({test.labels.size()});
  for (std::size_t i = 0; i < test.labels.size(); ++i) test_labels[i] = static_cast<double>(test.labels[i]);
  write_tensor(os, test_labels);
}

struct Dataset {
  DatasetSpec spec;
  LabeledBatch train;
  LabeledBatch test;
};

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("missing dataset file: " + path.string());
  Dataset d;
  nlohmann::json j = nlohmann::json::parse(io::read_string(is, "dataset header"), nullptr, false);
  if (j.is_discarded()) throw ArtifactError("corrupt dataset header JSON");
  d.spec = j.get<DatasetSpec>();
  auto read_side = [&](LabeledBatch& b) {
    b.images = read_tensor(is);
    Tensor lab = read_tensor(is);
    b.labels.resize(lab.numel());
    for (std::size_t i = 0; i < lab.numel(); ++i) b.labels[i] = static_cast<std::size_t>(lab[i]);
  };
  read_side(d.train);
  read_side(d.test);
  d.train.validate(static_cast<std::size_t>(d.spec.num_classes));
  d.test.validate(static_cast<std::size_t>(d.spec.num_classes));
  return d;
}

// Plain PGM (C=1) / PPM (C=3) export, maxval 255, round-half-even quantization.
inline void export_image(const Tensor& img, const std::filesystem::path& path) {
  if (img.rank() != 3) throw NumericError("export_image expects [C,H,W]");
  std::size_t C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  if (C != 1 && C != 3) throw NumericError("export_image supports 1 or 3 channels");
  for (double v : img.span())
    if (v < 0.0 || v > 1.0) throw NumericError("export_image requires values in [0,1]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot open for writing: " + path.string());
  os << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  int prev_round = std::fegetround();
  std::fesetround(FE_TONEAREST);  // nearbyint: ties to even
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double q = std::nearbyint(img[(c * H + y) * W + x] * 255.0);
        unsigned char byte = static_cast<unsigned char>(q);
        os.write(reinterpret_cast<const char*>(&byte), 1);
      }
  std::fesetround(prev_round);
  if (!os) throw ArtifactError("write failed: " + path.string());
}

// Nearest-centroid baseline used to establish class separability.
inline double nearest_centroid_accuracy(const LabeledBatch& train, const LabeledBatch& test,
                                        std::size_t num_classes) {
  std::size_t dim = train.images.numel() / train.size();
  std::vector<std::vector<double>> centroid(num_classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(num_classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const double* p = train.images.data() + i * dim;
    auto& c = centroid[train.labels[i]];
    for (std::size_t d = 0; d < dim; ++d) c[d] += p[d];
    count[train.labels[i]]++;
  }
  for (std::size_t k = 0; k < num_classes; ++k)
    if (count[k])
      for (auto& v : centroid[k]) v /= static_cast<double>(count[k]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double* p = test.images.data() + i * dim;
    double best = 0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      double d2 = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        double diff = p[d] - centroid[k][d];
        d2 += diff * diff;
      }
      if (k == 0 || d2 < best) {
        best = d2;
        arg = k;
      }
    }
    if (arg == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace scorelab
