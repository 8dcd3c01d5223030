#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorelab/attacks.hpp"
#include "scorelab/purify.hpp"

namespace scorelab {

struct ScheduleSpec {
  std::string kind = "linear-beta";
  int T = 200;
};

inline void to_json(nlohmann::json& j, const ScheduleSpec& s) { j = {{"kind", s.kind}, {"T", s.T}}; }
inline void from_json(const nlohmann::json& j, ScheduleSpec& s) {
  j.at("kind").get_to(s.kind);
  j.at("T").get_to(s.T);
}

struct TaggedAttack {
  std::string tag;     // unique row label
  std::string method;  // pgd | score_pgd | u_score_pgd | purifier_in_loop_pgd
  AttackConfig config;
};

inline void to_json(nlohmann::json& j, const TaggedAttack& a) {
  j = nlohmann::json(a.config);
  j["tag"] = a.tag;
  j["method"] = a.method;
}

inline void from_json(const nlohmann::json& j, TaggedAttack& a) {
  j.at("tag").get_to(a.tag);
  a.method = j.value("method", a.tag);
  a.config = j.get<AttackConfig>();
}

// Experiment manifest: artifact paths, schedule, purification, attack grid,
// victims and evaluation scale. Flags override manifest fields which override
// the built-in defaults.
struct Manifest {
  std::filesystem::path dataset_path = "out/dataset.ds";
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 3407;
  ScheduleSpec schedule;
  std::map<std::string, std::filesystem::path> checkpoints;  // conv_small, mlp, time_classifier, denoiser
  PurifyConfig purify;
  std::vector<TaggedAttack> attacks;
  std::vector<std::string> victims = {"conv_small", "mlp"};
  std::string surrogate = "conv_small";
  int eval_images = 192;
  int iqa_images = 128;
  std::vector<std::uint64_t> attack_seeds = {3407, 3408, 3409};
  int bench_images = 8;
  int bench_repetitions = 3;

  void validate() const {
    std::set<std::string> tags;
    for (const auto& a : attacks)
      if (!tags.insert(a.tag).second) throw UsageError("duplicate attack tag: " + a.tag);
    if (eval_images < 1 || iqa_images < 1 || bench_images < 1) throw UsageError("manifest sizes must be positive");
    if (attack_seeds.empty()) throw UsageError("manifest requires at least one attack seed");
  }

  std::filesystem::path checkpoint(const std::string& name) const {
    auto it = checkpoints.find(name);
    if (it == checkpoints.end()) throw ArtifactError("manifest has no checkpoint entry for '" + name + "'");
    return it->second;
  }

  static Manifest defaults() {
    Manifest m;
    m.checkpoints = {{"conv_small", "out/victim_conv_small.ckpt"},
                     {"mlp", "out/victim_mlp.ckpt"},
                     {"time_classifier", "out/time_classifier.ckpt"},
                     {"denoiser", "out/denoiser.ckpt"}};
    m.purify.t_star = 30;
    m.purify.ddim_stride = 3;
    m.purify.seed = 3407;
    AttackConfig base;  // gamma 0.06, eta gamma/8, n 10, score_t 0.1*T
    base.gamma = 0.06;
    base.eta = 0.06 / 8;
    base.n = 10;
    base.score_t = 20;
    base.seed = 3407;
    m.attacks = {{"pgd", "pgd", base}, {"score_pgd", "score_pgd", base}, {"u_score_pgd", "u_score_pgd", base}};
    return m;
  }
};

inline void to_json(nlohmann::json& j, const Manifest& m) {
  nlohmann::json ckpts = nlohmann::json::object();
  for (const auto& [k, v] : m.checkpoints) ckpts[k] = v.string();
  j = {{"dataset", m.dataset_path.string()},
       {"out_dir", m.out_dir.string()},
       {"seed", m.seed},
       {"schedule", m.schedule},
       {"checkpoints", ckpts},
       {"purify", m.purify},
       {"attacks", m.attacks},
       {"victims", m.victims},
       {"surrogate", m.surrogate},
       {"eval_images", m.eval_images},
       {"iqa_images", m.iqa_images},
       {"attack_seeds", m.attack_seeds},
       {"bench_images", m.bench_images},
       {"bench_repetitions", m.bench_repetitions}};
}

inline void from_json(const nlohmann::json& j, Manifest& m) {
  m = Manifest::defaults();
  if (j.contains("dataset")) m.dataset_path = j.at("dataset").get<std::string>();
  if (j.contains("out_dir")) m.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("seed")) j.at("seed").get_to(m.seed);
  if (j.contains("schedule")) j.at("schedule").get_to(m.schedule);
  if (j.contains("checkpoints")) {
    for (const auto& [k, v] : j.at("checkpoints").items()) m.checkpoints[k] = v.get<std::string>();
  }
  if (j.contains("purify")) j.at("purify").get_to(m.purify);
  if (j.contains("attacks")) j.at("attacks").get_to(m.attacks);
  if (j.contains("victims")) j.at("victims").get_to(m.victims);
  if (j.contains("surrogate")) j.at("surrogate").get_to(m.surrogate);
  if (j.contains("eval_images")) j.at("eval_images").get_to(m.eval_images);
  if (j.contains("iqa_images")) j.at("iqa_images").get_to(m.iqa_images);
  if (j.contains("attack_seeds")) j.at("attack_seeds").get_to(m.attack_seeds);
  if (j.contains("bench_images")) j.at("bench_images").get_to(m.bench_images);
  if (j.contains("bench_repetitions")) j.at("bench_repetitions").get_to(m.bench_repetitions);
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ArtifactError("missing manifest file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw UsageError("manifest is not valid JSON: " + path.string());
  Manifest m = j.get<Manifest>();
  m.validate();
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write manifest: " + path.string());
  os << nlohmann::json(m).dump(2) << "\n";
}

}  // namespace scorelab
