#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "scorelab/dataset.hpp"
#include "scorelab/manifest.hpp"
#include "scorelab/metrics.hpp"
#include "scorelab/train.hpp"

namespace scorelab {

// One row of the shared CSV schema:
//   attack,victim,protected,gamma,norm,asr,psnr,ssim,featdist,wall_s,seed
// Inapplicable fields stay empty. Measured wall times appear only in the
// runtime table so the scientific tables are bitwise reproducible.
struct EvalRow {
  std::string attack;
  std::string victim;
  bool protected_ = false;
  double gamma = 0;
  std::string norm;
  std::optional<double> asr, psnr_db, ssim_value, featdist, wall_s;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<EvalRow> unprotected_asr;
  std::vector<EvalRow> protected_asr;
  std::vector<EvalRow> iqa;
  std::vector<EvalRow> runtime;
};

inline std::string csv_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write CSV: " + path.string());
  os << "attack,victim,protected,gamma,norm,asr,psnr,ssim,featdist,wall_s,seed\n";
  auto opt = [](const std::optional<double>& v) { return v ? csv_num(*v) : std::string(); };
  for (const auto& r : rows) {
    os << r.attack << "," << r.victim << "," << (r.protected_ ? "true" : "false") << "," << csv_num(r.gamma) << ","
       << r.norm << "," << opt(r.asr) << "," << opt(r.psnr_db) << "," << opt(r.ssim_value) << ","
       << opt(r.featdist) << "," << opt(r.wall_s) << "," << r.seed << "\n";
  }
}

// Everything the suite needs in memory.
struct SuiteArtifacts {
  Dataset dataset;
  NoiseSchedule schedule;
  std::map<std::string, ClassifierParams> victims;
  TimeClassifierParams time_classifier;
  DenoiserParams denoiser;
};

inline SuiteArtifacts load_artifacts(const Manifest& m) {
  SuiteArtifacts a;
  a.dataset = load_dataset(m.dataset_path);
  a.schedule = make_schedule(m.schedule.kind, m.schedule.T);
  for (const auto& v : m.victims) a.victims.emplace(v, load_classifier(m.checkpoint(v)));
  if (!a.victims.count(m.surrogate)) a.victims.emplace(m.surrogate, load_classifier(m.checkpoint(m.surrogate)));
  a.time_classifier = load_time_classifier(m.checkpoint("time_classifier"));
  a.denoiser = load_denoiser(m.checkpoint("denoiser"));
  a.time_classifier.check_schedule(a.schedule);
  a.denoiser.check_schedule(a.schedule);
  return a;
}

namespace detail {

inline AttackOutcome craft(const TaggedAttack& atk, const SuiteArtifacts& art, const Manifest& m, const Tensor& x,
                           const std::vector<std::size_t>& y, std::uint64_t seed) {
  AttackConfig cfg = atk.config;
  cfg.seed = seed;
  const ClassifierParams& surrogate = art.victims.at(m.surrogate);
  if (atk.method == "pgd") return pgd(surrogate, x, y, cfg);
  if (atk.method == "score_pgd") return score_pgd(art.time_classifier, art.schedule, x, y, cfg);
  if (atk.method == "u_score_pgd") return u_score_pgd(surrogate, art.time_classifier, art.schedule, x, y, cfg);
  if (atk.method == "purifier_in_loop_pgd")
    return purifier_in_loop_pgd(surrogate, m.purify, art.denoiser, art.schedule, x, y, cfg);
  throw UsageError("unknown attack method '" + atk.method + "' for tag '" + atk.tag + "'");
}

inline double asr_from_predictions(const std::vector<std::size_t>& clean_pred,
                                   const std::vector<std::size_t>& adv_pred, const std::vector<std::size_t>& y) {
  std::size_t denom = 0, flipped = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (clean_pred[i] != y[i]) continue;
    ++denom;
    if (adv_pred[i] != y[i]) ++flipped;
  }
  if (denom == 0) throw NumericError("ASR: no correctly-classified clean images");
  return static_cast<double>(flipped) / static_cast<double>(denom);
}

}  // namespace detail

// Runs the full protocol: unprotected ASR, protected ASR, IQA on purified
// pairs with shared purification seeds, and the runtime comparison. Writes
// the four CSV tables under out_dir and returns the report.
inline EvalReport run_experiment_suite(const Manifest& m, const SuiteArtifacts& art, bool verbose = false) {
  m.validate();
  std::filesystem::create_directories(m.out_dir);
  EvalReport report;

  const LabeledBatch probe = art.dataset.test.head(static_cast<std::size_t>(m.eval_images));
  const Tensor& x = probe.images;
  const std::vector<std::size_t>& y = probe.labels;
  RandomSource purify_rng(m.purify.seed, 0x9F2);  // consulted only under fresh-per-call

  // Clean predictions per victim, raw and purified (purification seeds shared
  // with every adversarial evaluation below).
  Tensor purified_clean = purify(m.purify, art.denoiser, art.schedule, x, purify_rng);
  std::map<std::string, std::vector<std::size_t>> clean_pred, clean_pred_prot;
  for (const auto& v : m.victims) {
    clean_pred[v] = classify(art.victims.at(v), x);
    clean_pred_prot[v] = classify(art.victims.at(v), purified_clean);
  }

  for (std::uint64_t seed : m.attack_seeds) {
    for (const auto& atk : m.attacks) {
      if (verbose) std::fprintf(stderr, "[eval] attack %s seed %llu\n", atk.tag.c_str(), (unsigned long long)seed);
      AttackOutcome outcome = detail::craft(atk, art, m, x, y, seed);
      Tensor purified_adv = purify(m.purify, art.denoiser, art.schedule, outcome.x_adv, purify_rng);
      for (const auto& v : m.victims) {
        EvalRow row;
        row.attack = atk.tag;
        row.victim = v;
        row.gamma = atk.config.gamma;
        row.norm = norm_to_string(atk.config.norm);
        row.seed = seed;
        row.asr = detail::asr_from_predictions(clean_pred[v], classify(art.victims.at(v), outcome.x_adv), y);
        report.unprotected_asr.push_back(row);
        row.protected_ = true;
        row.asr = detail::asr_from_predictions(clean_pred_prot[v], classify(art.victims.at(v), purified_adv), y);
        report.protected_asr.push_back(row);
      }

      // IQA on the first-seed outcomes only, over the IQA slice.
      if (seed == m.attack_seeds.front()) {
        std::size_t nq = std::min<std::size_t>(static_cast<std::size_t>(m.iqa_images), probe.size());
        Tensor clean_q = x.slice0(0, nq);
        Tensor padv_q = purified_adv.slice0(0, nq);
        Tensor pclean_q = purified_clean.slice0(0, nq);
        const ClassifierParams& feat_net = art.victims.at(m.surrogate);
        IqaPairReport iqa = iqa_pair_report(feat_net, clean_q, outcome.x_adv.slice0(0, nq), padv_q, pclean_q);
        EvalRow main_row;
        main_row.attack = atk.tag;
        main_row.victim = m.surrogate;
        main_row.gamma = atk.config.gamma;
        main_row.norm = norm_to_string(atk.config.norm);
        main_row.seed = m.purify.seed;
        main_row.psnr_db = iqa.clean_vs_purified_adv.psnr_db;
        main_row.ssim_value = iqa.clean_vs_purified_adv.ssim_value;
        main_row.featdist = iqa.clean_vs_purified_adv.feat_dist;
        report.iqa.push_back(main_row);
        EvalRow bracket_row = main_row;  // protected=true marks the purified-clean reference
        bracket_row.protected_ = true;
        bracket_row.psnr_db = iqa.purified_clean_vs_purified_adv.psnr_db;
        bracket_row.ssim_value = iqa.purified_clean_vs_purified_adv.ssim_value;
        bracket_row.featdist = iqa.purified_clean_vs_purified_adv.feat_dist;
        report.iqa.push_back(bracket_row);
      }
    }
  }

  // Runtime comparison: every manifest attack plus the purifier-in-the-loop
  // reference, at n and 2n, on a small bench batch.
  const LabeledBatch bench = art.dataset.test.head(static_cast<std::size_t>(m.bench_images));
  std::vector<TaggedAttack> bench_attacks = m.attacks;
  {
    TaggedAttack ref;
    ref.tag = "purifier_in_loop_pgd";
    ref.method = "purifier_in_loop_pgd";
    ref.config = m.attacks.empty() ? AttackConfig{} : m.attacks.front().config;
    bench_attacks.push_back(ref);
  }
  for (const auto& atk : bench_attacks) {
    for (int mult : {1, 2}) {
      TaggedAttack timed = atk;
      timed.config.n = atk.config.n * mult;
      if (verbose) std::fprintf(stderr, "[eval] bench %s n=%d\n", atk.tag.c_str(), timed.config.n);
      RuntimeStats stats = runtime_bench(
          [&] { detail::craft(timed, art, m, bench.images, bench.labels, m.seed); }, m.bench_repetitions,
          timed.config.n);
      EvalRow row;
      row.attack = atk.tag + "_n" + std::to_string(timed.config.n);
      row.victim = atk.method == "score_pgd" ? "none" : m.surrogate;
      row.gamma = atk.config.gamma;
      row.norm = norm_to_string(atk.config.norm);
      row.seed = m.seed;
      row.wall_s = stats.mean_seconds;
      report.runtime.push_back(row);
    }
  }

  write_csv(m.out_dir / "table1_unprotected_asr.csv", report.unprotected_asr);
  write_csv(m.out_dir / "table2_protected_asr.csv", report.protected_asr);
  write_csv(m.out_dir / "table3_iqa.csv", report.iqa);
  write_csv(m.out_dir / "table5_runtime.csv", report.runtime);
  return report;
}

inline EvalReport run_experiment_suite(const Manifest& m, bool verbose = false) {
  SuiteArtifacts art = load_artifacts(m);
  return run_experiment_suite(m, art, verbose);
}

}  // namespace scorelab
