// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "defas/config.hpp"
#include "defas/cue.hpp"
#include "defas/io.hpp"
#include "defas/protocol.hpp"
#include "defas/theory.hpp"

namespace defas {

/// Advisory exclusive lock: atomically creates `<dir>/.lock` and removes it
/// on destruction. A second writer fails with an error naming the file.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path file_;
};

struct StageInfo {
  std::filesystem::path dir;
  bool reused = false;  // a complete artifact with the right key already existed
};

/// Staged artifact tree rooted at one directory:
///
///   corpus/<key>/corpus, extra, unknown   rendered images + metadata
///   dfg/<key>/                            predictor checkpoint + loss curve
///   cues/<key>/corpus, extra, unknown     cached residuals (f32 + index)
///   fas/<key>/                            classifier checkpoint + log
///   run/<key>/                            metric reports + resolved config
///
/// `unknown` holds the mask3d renders of the corpus subjects; they stay out
/// of every training path and only the unknown-attack evaluation reads them.
///
/// Each key hashes exactly the config prefix that shapes the artifact, so a
/// changed knob lands in a fresh directory and never mixes with stale
/// output. Stages read their inputs back from disk rather than reusing live
/// memory, which makes re-runs byte-identical: images round-trip through
/// 8-bit PNG and tensors through float32 exactly once, in every invocation
/// order. Downstream commands fail with a "run <command> first" error when a
/// prerequisite artifact is missing; verify_theory provisions its own
/// prerequisites because it doubles as the end-to-end smoke check.
class Pipeline {
 public:
  Pipeline(std::filesystem::path root, RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path corpus_dir() const;
  std::filesystem::path dfg_dir() const;
  std::filesystem::path cue_dir() const;
  std::filesystem::path fas_dir() const;
  std::filesystem::path run_dir() const;

  // ---- artifact-producing stages ----
  StageInfo gen_data();
  StageInfo train_dfg();   // needs gen_data
  StageInfo cache_cues();  // needs gen_data + train_dfg
  StageInfo train_fas();   // needs gen_data + cache_cues; one full-corpus model

  // ---- evaluation commands; results land in run_dir() ----
  MetricsReport eval_loo();  // needs cache_cues
  /// Joins the held-out mask3d renders to the corpus and runs the
  /// subject-disjoint unknown-attack protocol. Needs cache_cues.
  MetricsReport eval_unknown();
  /// Empty list means {T, 0.8T, 0.6T, 0.4T, 0.2T}; held_out < 0 means the
  /// last domain. Needs gen_data + train_dfg (cues are recomputed per t_hat).
  MetricsReport ablate_tsteps(std::vector<int> t_hat_list = {}, int held_out = -1);
  /// Empty list means {0.25, 0.5, 1.0}; the generator is retrained per
  /// fraction, so this only needs gen_data.
  MetricsReport ablate_data(std::vector<double> fractions = {}, int held_out = -1);

  /// Numerical verification of the reconstruction-bound theory. Runs
  /// gen_data and train_dfg itself when missing. Writes theory.json and
  /// theory.txt into run_dir().
  TheoryReport verify_theory();

  /// Summary of every report present in run_dir(); written as report.json
  /// and report.txt, returned as JSON.
  Json report();

  // ---- lazily loaded artifacts (throw with guidance when missing) ----
  const std::vector<SyntheticSample>& corpus();
  const std::vector<SyntheticSample>& extra_pool();
  const std::vector<SyntheticSample>& unknown_pool();
  const NoisePredictor& predictor();
  const CueStore& corpus_cues();
  const CueStore& extra_cues();
  const CueStore& unknown_cues();

 private:
  StageInfo stage_begin(const std::filesystem::path& dir, const std::string& key) const;
  void stage_finish(const std::filesystem::path& dir, const std::string& key, Json info) const;
  void require_stage(const std::filesystem::path& dir, const std::string& key,
                     const std::string& command) const;
  std::filesystem::path ensure_run_dir();
  void write_report(const std::filesystem::path& dir, const std::string& name,
                    const MetricsReport& rep) const;

  std::filesystem::path root_;
  RunConfig cfg_;
  std::optional<std::vector<SyntheticSample>> corpus_;
  std::optional<std::vector<SyntheticSample>> extra_pool_;
  std::optional<std::vector<SyntheticSample>> unknown_pool_;
  std::unique_ptr<NoisePredictor> predictor_;
  std::optional<CueStore> corpus_cues_;
  std::optional<CueStore> extra_cues_;
  std::optional<CueStore> unknown_cues_;
};

}  // namespace defas
