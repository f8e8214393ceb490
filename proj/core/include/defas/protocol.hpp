// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <tuple>
#include <vector>

#include "defas/config.hpp"
#include "defas/cue.hpp"
#include "defas/dgtrain.hpp"
#include "defas/eval.hpp"
#include "defas/synth.hpp"

namespace defas {

/// Joins split subsets back to their cue tensors. Samples are keyed by
/// (domain, subject, attack, frame), which is unique within a corpus.
class CueLookup {
 public:
  CueLookup(const std::vector<SyntheticSample>& corpus, const CueStore& cues);

  const AnomalousCue& find(const SyntheticSample& s) const;  // throws if absent

  /// Cue store aligned with `subset`, for training on a split.
  CueStore gather(const std::vector<SyntheticSample>& subset) const;

 private:
  std::map<std::tuple<int, int, int, int>, const AnomalousCue*> map_;
};

/// Latent/identity-token examples for generator training; real <=> label 0.
std::vector<DfgExample> make_dfg_examples(const std::vector<SyntheticSample>& samples,
                                          const IdentityEncoder& id_enc);

/// Shared constructions so every stage agrees on schedule, encoder seed and
/// network geometry for a given configuration.
NoiseSchedule make_schedule_from(const RunConfig& cfg);
IdentityEncoder make_id_encoder(const RunConfig& cfg);
DfgSpec dfg_spec_from(const RunConfig& cfg);
OaSpec oa_spec_from(const RunConfig& cfg);
CorpusSpec corpus_spec_from(const RunConfig& cfg);

/// Corpus and extra-real pool exactly as the staged pipeline generates them.
std::vector<SyntheticSample> build_corpus_from(const RunConfig& cfg);
std::vector<SyntheticSample> build_extra_pool_from(const RunConfig& cfg);

/// Mask3d renders of the corpus subjects, kept out of every training corpus
/// and consumed only by the unknown-attack protocol. Seeding streams are
/// keyed per attack slot, so the print/replay samples are identical whether
/// or not this pool is rendered. Empty when the configured corpus already
/// lists mask3d among its attacks.
std::vector<SyntheticSample> build_unknown_pool_from(const RunConfig& cfg);

/// Deterministic shuffled prefix of the pool, k = max(1, round(fraction*n)).
/// Generator training and the data-fraction ablation share this selection.
std::vector<SyntheticSample> select_pool_fraction(const std::vector<SyntheticSample>& pool,
                                                  double fraction, uint64_t seed);

/// One fake-probability per video: frames sampled uniformly, frame scores
/// averaged. `cue_of` returns the cue image for a sample (never null); pass
/// a zero image closure for the cue-free baseline.
ScoredSet score_video_set(const OaNet& net, const std::vector<SyntheticSample>& set,
                          const std::function<const Image&(const SyntheticSample&)>& cue_of,
                          int frames);

/// Trains one classifier on the split and scores the held-out videos.
/// HTER follows cfg.eval.hter_policy: "eer_test" thresholds on the test
/// scores, "dev_threshold" takes the threshold from the training videos.
MetricsLeg train_eval_leg(const SplitPair& split, const CueLookup& cues,
                          const std::vector<SyntheticSample>& extra_pool,
                          const CueStore& extra_cues, const RunConfig& cfg,
                          const std::string& leg_name, uint64_t net_seed,
                          FasTrainResult* train_out = nullptr);

/// Leave-one-out over every domain in the corpus: train on the rest,
/// evaluate on the held-out domain, one report row per domain plus the mean.
MetricsReport run_loo(const std::vector<SyntheticSample>& corpus, const CueStore& corpus_cues,
                      const std::vector<SyntheticSample>& extra_pool, const CueStore& extra_cues,
                      const RunConfig& cfg);

/// Subject-disjoint split with the mask3d attack excluded from training;
/// reports seen-attack and unseen-attack rows against the same real set.
/// Aborts if a mask3d sample leaks into the training side.
MetricsReport run_unknown_attack(const std::vector<SyntheticSample>& corpus,
                                 const CueStore& corpus_cues,
                                 const std::vector<SyntheticSample>& extra_pool,
                                 const CueStore& extra_cues, const RunConfig& cfg);

/// Recomputes cues at each noising depth and runs one train/eval on a fixed
/// split (held_out_domain) and seed; one row per t_hat.
MetricsReport ablate_timesteps(const std::vector<SyntheticSample>& corpus,
                               const std::vector<SyntheticSample>& extra_pool,
                               const EpsPredictor& pred, const NoiseSchedule& ns,
                               const IdentityEncoder& id_enc, const std::vector<int>& t_hat_list,
                               int held_out_domain, const RunConfig& cfg);

/// Retrains the generator on each fraction of the extra-real pool, then runs
/// the full cue + train/eval pipeline on a fixed split; one row per fraction.
/// Fractions must lie in (0, 1].
MetricsReport ablate_data_fraction(const std::vector<SyntheticSample>& corpus,
                                   const std::vector<SyntheticSample>& extra_pool,
                                   const std::vector<double>& fractions, int held_out_domain,
                                   const RunConfig& cfg);

}  // namespace defas
