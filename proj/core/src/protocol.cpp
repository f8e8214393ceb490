// SPDX-License-Identifier: Apache-2.0
#include "defas/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "defas/check.hpp"

namespace defas {

CueLookup::CueLookup(const std::vector<SyntheticSample>& corpus, const CueStore& cues) {
  DEFAS_CHECK(cues.cues.size() == corpus.size(), "cue store does not match the corpus");
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    const bool fresh =
        map_.emplace(std::make_tuple(s.domain_id, s.subject_id, static_cast<int>(s.attack),
                                     s.frame),
                     &cues.cues[i])
            .second;
    DEFAS_CHECK(fresh, "duplicate sample key in corpus");
  }
}

const AnomalousCue& CueLookup::find(const SyntheticSample& s) const {
  auto it = map_.find(
      std::make_tuple(s.domain_id, s.subject_id, static_cast<int>(s.attack), s.frame));
  DEFAS_CHECK(it != map_.end(), "sample has no cached cue (domain ", s.domain_id, ", subject ",
              s.subject_id, ", frame ", s.frame, ")");
  return *it->second;
}

CueStore CueLookup::gather(const std::vector<SyntheticSample>& subset) const {
  CueStore out;
  for (const auto& s : subset) out.cues.push_back(find(s));
  return out;
}

std::vector<DfgExample> make_dfg_examples(const std::vector<SyntheticSample>& samples,
                                          const IdentityEncoder& id_enc) {
  std::vector<DfgExample> out;
  for (const auto& s : samples) {
    DfgExample ex;
    ex.z0 = image_to_latent(s.image);
    ex.id_tokens = id_enc.encode(s.image);
    ex.real = s.label == 0;
    out.push_back(std::move(ex));
  }
  return out;
}

NoiseSchedule make_schedule_from(const RunConfig& cfg) {
  return make_schedule(cfg.dfg.T, cfg.dfg.beta_min, cfg.dfg.beta_max);
}

IdentityEncoder make_id_encoder(const RunConfig& cfg) {
  return IdentityEncoder(cfg.dfg.id_tokens, cfg.dfg.id_dim, cfg.data.image_size,
                         cfg.data.channels,
                         Rng(static_cast<uint64_t>(cfg.dfg.seed)).child(0x1DE).base_seed());
}

DfgSpec dfg_spec_from(const RunConfig& cfg) {
  DfgSpec spec;
  spec.image_size = cfg.data.image_size;
  spec.channels = cfg.data.channels;
  spec.width = cfg.dfg.channels;
  spec.time_dim = cfg.dfg.time_dim;
  spec.id_dim = cfg.dfg.id_dim;
  return spec;
}

CorpusSpec corpus_spec_from(const RunConfig& cfg) {
  CorpusSpec spec;
  spec.n_subjects = cfg.data.subjects_per_domain;
  spec.domains = default_domains(cfg.data.n_domains);
  spec.attacks = attack_list(cfg.data.attacks);
  spec.frames_per_video = cfg.data.frames_per_video;
  spec.image_size = cfg.data.image_size;
  spec.channels = cfg.data.channels;
  spec.strength_min = cfg.data.artifact_min;
  spec.strength_max = cfg.data.artifact_max;
  spec.seed = static_cast<uint64_t>(cfg.data.seed);
  return spec;
}

std::vector<SyntheticSample> build_corpus_from(const RunConfig& cfg) {
  return build_corpus(corpus_spec_from(cfg));
}

std::vector<SyntheticSample> build_extra_pool_from(const RunConfig& cfg) {
  // pool streams are disjoint from corpus streams, so the base seed is shared
  return build_extra_real_pool(cfg.data.extra_real_subjects, cfg.data.extra_real_domains,
                               cfg.data.frames_per_video, static_cast<uint64_t>(cfg.data.seed),
                               cfg.data.image_size, cfg.data.channels);
}

std::vector<SyntheticSample> build_unknown_pool_from(const RunConfig& cfg) {
  for (AttackType a : attack_list(cfg.data.attacks))
    if (a == AttackType::mask3d) return {};
  RunConfig ext = cfg;
  ext.data.attacks = cfg.data.attacks + ",mask3d";
  std::vector<SyntheticSample> out;
  for (auto& s : build_corpus_from(ext))
    if (s.attack == AttackType::mask3d) out.push_back(std::move(s));
  return out;
}

std::vector<SyntheticSample> select_pool_fraction(const std::vector<SyntheticSample>& pool,
                                                  double fraction, uint64_t seed) {
  DEFAS_CHECK(fraction > 0.0 && fraction <= 1.0, "fraction ", fraction, " outside (0,1]");
  DEFAS_CHECK(!pool.empty(), "empty pool");
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng pool_rng = Rng(seed).child(0xF7AC);
  pool_rng.shuffle(order);
  const int k = std::max(
      1, static_cast<int>(std::lround(fraction * static_cast<double>(pool.size()))));
  std::vector<SyntheticSample> subset;
  subset.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) subset.push_back(pool[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  return subset;
}

OaSpec oa_spec_from(const RunConfig& cfg) {
  OaSpec spec;
  spec.image_size = cfg.data.image_size;
  spec.channels = cfg.data.channels;
  spec.patch = cfg.fas.patch;
  spec.d_model = cfg.fas.d_model;
  spec.blocks = cfg.fas.blocks;
  spec.heads = cfg.fas.heads;
  spec.cross_heads = cfg.fas.heads;
  spec.cue_tokens = cfg.fas.cue_tokens;
  spec.cue_dim = cfg.fas.cue_dim;
  spec.ffn_hidden = cfg.fas.ffn_hidden;
  return spec;
}

ScoredSet score_video_set(const OaNet& net, const std::vector<SyntheticSample>& set,
                          const std::function<const Image&(const SyntheticSample&)>& cue_of,
                          int frames) {
  DEFAS_CHECK(frames >= 1, "need at least one frame per video");
  ScoredSet out;
  for (const auto& [key, idx] : group_videos(set)) {
    std::vector<int> order = idx;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return set[static_cast<size_t>(a)].frame <
                                         set[static_cast<size_t>(b)].frame; });
    double sum = 0.0;
    const std::vector<int> take = frame_sample(static_cast<int>(order.size()), frames);
    for (int k : take) {
      const auto& s = set[static_cast<size_t>(order[static_cast<size_t>(k)])];
      sum += classify(net.forward(s.image, cue_of(s)).logits);
    }
    out.add(sum / static_cast<double>(take.size()),
            set[static_cast<size_t>(order[0])].label);
  }
  return out;
}

namespace {

OaNet train_split_model(const SplitPair& split, const CueLookup& cues,
                        const std::vector<SyntheticSample>& extra_pool,
                        const CueStore& extra_cues, const RunConfig& cfg, uint64_t net_seed,
                        FasTrainResult* train_out) {
  OaNet net(oa_spec_from(cfg), net_seed);
  const CueStore train_cues = cues.gather(split.train);
  FasTrainResult res = train_fas(net, split.train, train_cues, extra_pool, extra_cues, cfg.fas);
  if (train_out) *train_out = std::move(res);
  return net;
}

MetricsLeg score_leg(const OaNet& net, const SplitPair& split,
                     const std::vector<SyntheticSample>& test_set, const CueLookup& cues,
                     const RunConfig& cfg, const std::string& leg_name) {
  const OaSpec& spec = net.spec();
  const Image zero = Image::zeros(spec.image_size, spec.image_size, spec.channels);
  const bool cue_mode = cfg.fas.mode == "cue";
  auto cue_of = [&](const SyntheticSample& s) -> const Image& {
    return cue_mode ? cues.find(s).residual : zero;
  };

  const ScoredSet test = score_video_set(net, test_set, cue_of, cfg.eval.frames);
  HterResult r;
  if (cfg.eval.hter_policy == "eer_test") {
    r = hter(test);
  } else if (cfg.eval.hter_policy == "dev_threshold") {
    const ScoredSet dev = score_video_set(net, split.train, cue_of, cfg.eval.frames);
    r = hter_at(test, hter(dev).threshold);
  } else {
    DEFAS_CHECK(false, "unknown hter policy '", cfg.eval.hter_policy, "'");
  }

  MetricsLeg leg;
  leg.held_out = leg_name;
  leg.hter_percent = 100.0 * r.hter;
  leg.auc_percent = 100.0 * auc(test);
  return leg;
}

const std::vector<SyntheticSample>& pool_or_empty(const std::vector<SyntheticSample>& pool,
                                                 const RunConfig& cfg) {
  static const std::vector<SyntheticSample> kEmpty;
  return cfg.fas.use_extra_real ? pool : kEmpty;
}

const CueStore& cues_or_empty(const CueStore& cues, const RunConfig& cfg) {
  static const CueStore kEmpty;
  return cfg.fas.use_extra_real ? cues : kEmpty;
}

}  // namespace

MetricsLeg train_eval_leg(const SplitPair& split, const CueLookup& cues,
                          const std::vector<SyntheticSample>& extra_pool,
                          const CueStore& extra_cues, const RunConfig& cfg,
                          const std::string& leg_name, uint64_t net_seed,
                          FasTrainResult* train_out) {
  OaNet net = train_split_model(split, cues, pool_or_empty(extra_pool, cfg),
                                cues_or_empty(extra_cues, cfg), cfg, net_seed, train_out);
  return score_leg(net, split, split.test, cues, cfg, leg_name);
}

MetricsReport run_loo(const std::vector<SyntheticSample>& corpus, const CueStore& corpus_cues,
                      const std::vector<SyntheticSample>& extra_pool, const CueStore& extra_cues,
                      const RunConfig& cfg) {
  std::set<int> domains;
  for (const auto& s : corpus) domains.insert(s.domain_id);
  DEFAS_CHECK(domains.size() >= 2, "leave-one-out needs at least two domains");

  const CueLookup cues(corpus, corpus_cues);
  MetricsReport report;
  report.title = "leave-one-out mode=" + cfg.fas.mode + " policy=" + cfg.eval.hter_policy +
                 " seed=" + std::to_string(cfg.fas.seed);
  report.config_hash = cfg.fas_key();
  for (int d : domains) {
    const SplitPair split = build_loo_split(corpus, d);
    const uint64_t net_seed = Rng(static_cast<uint64_t>(cfg.fas.seed))
                                  .child(0x1E60 + static_cast<uint64_t>(d))
                                  .base_seed();
    report.legs.push_back(train_eval_leg(split, cues, extra_pool, extra_cues, cfg,
                                         "domain" + std::to_string(d), net_seed));
  }
  return report;
}

MetricsReport run_unknown_attack(const std::vector<SyntheticSample>& corpus,
                                 const CueStore& corpus_cues,
                                 const std::vector<SyntheticSample>& extra_pool,
                                 const CueStore& extra_cues, const RunConfig& cfg) {
  const SplitPair split = build_unknown_attack_split(corpus);
  for (const auto& s : split.train)
    DEFAS_CHECK(s.attack != AttackType::mask3d, "mask3d sample leaked into the training split");
  bool test_has_unseen = false;
  for (const auto& s : split.test) test_has_unseen |= s.attack == AttackType::mask3d;
  DEFAS_CHECK(test_has_unseen, "corpus holds no mask3d samples to evaluate on");

  const CueLookup cues(corpus, corpus_cues);
  const uint64_t net_seed =
      Rng(static_cast<uint64_t>(cfg.fas.seed)).child(0x0A77).base_seed();
  FasTrainResult train_res;
  OaNet net = train_split_model(split, cues, pool_or_empty(extra_pool, cfg),
                                cues_or_empty(extra_cues, cfg), cfg, net_seed, &train_res);

  std::vector<SyntheticSample> seen, unseen;
  for (const auto& s : split.test) {
    if (s.label == 0) {
      seen.push_back(s);
      unseen.push_back(s);
    } else if (s.attack == AttackType::mask3d) {
      unseen.push_back(s);
    } else {
      seen.push_back(s);
    }
  }

  MetricsReport report;
  report.title = "unknown-attack mode=" + cfg.fas.mode + " policy=" + cfg.eval.hter_policy +
                 " seed=" + std::to_string(cfg.fas.seed);
  report.config_hash = cfg.fas_key();
  report.legs.push_back(score_leg(net, split, seen, cues, cfg, "seen_attacks"));
  report.legs.push_back(score_leg(net, split, unseen, cues, cfg, "unseen_mask3d"));
  return report;
}

MetricsReport ablate_timesteps(const std::vector<SyntheticSample>& corpus,
                               const std::vector<SyntheticSample>& extra_pool,
                               const EpsPredictor& pred, const NoiseSchedule& ns,
                               const IdentityEncoder& id_enc, const std::vector<int>& t_hat_list,
                               int held_out_domain, const RunConfig& cfg) {
  DEFAS_CHECK(!t_hat_list.empty(), "empty t_hat list");
  for (int t : t_hat_list)
    DEFAS_CHECK(t >= 1 && t <= ns.T, "t_hat=", t, " outside [1,", ns.T, "]");

  const SplitPair split = build_loo_split(corpus, held_out_domain);
  const uint64_t net_seed =
      Rng(static_cast<uint64_t>(cfg.fas.seed)).child(0xAB0).base_seed();

  MetricsReport report;
  report.title = "timestep ablation mode=" + cfg.fas.mode + " held_out=domain" +
                 std::to_string(held_out_domain) + " seed=" + std::to_string(cfg.fas.seed);
  report.config_hash = cfg.fas_key();
  for (int t : t_hat_list) {
    RunConfig::Cue cue_cfg = cfg.cue;
    cue_cfg.t_hat = t;
    const CueStore corpus_cues = compute_cues(corpus, pred, ns, id_enc, cue_cfg);
    CueStore extra_cues;
    if (cfg.fas.use_extra_real && !extra_pool.empty())
      extra_cues = compute_cues(extra_pool, pred, ns, id_enc, cue_cfg);
    const CueLookup cues(corpus, corpus_cues);
    report.legs.push_back(train_eval_leg(split, cues, extra_pool, extra_cues, cfg,
                                         "t=" + std::to_string(t), net_seed));
  }
  return report;
}

MetricsReport ablate_data_fraction(const std::vector<SyntheticSample>& corpus,
                                   const std::vector<SyntheticSample>& extra_pool,
                                   const std::vector<double>& fractions, int held_out_domain,
                                   const RunConfig& cfg) {
  DEFAS_CHECK(!fractions.empty(), "empty fraction list");
  for (double f : fractions)
    DEFAS_CHECK(f > 0.0 && f <= 1.0, "fraction ", f, " outside (0,1]");
  DEFAS_CHECK(!extra_pool.empty(), "data-fraction ablation needs a real pool");

  const NoiseSchedule ns = make_schedule_from(cfg);
  const IdentityEncoder id_enc = make_id_encoder(cfg);
  const SplitPair split = build_loo_split(corpus, held_out_domain);
  const uint64_t net_seed =
      Rng(static_cast<uint64_t>(cfg.fas.seed)).child(0xDF0).base_seed();

  MetricsReport report;
  report.title = "data-fraction ablation mode=" + cfg.fas.mode + " held_out=domain" +
                 std::to_string(held_out_domain) + " seed=" + std::to_string(cfg.fas.seed);
  report.config_hash = cfg.fas_key();
  for (double f : fractions) {
    const std::vector<SyntheticSample> subset =
        select_pool_fraction(extra_pool, f, static_cast<uint64_t>(cfg.dfg.seed));

    NoisePredictor pred(dfg_spec_from(cfg), static_cast<uint64_t>(cfg.dfg.seed));
    DfgTrainOpts opts;
    opts.steps = cfg.dfg.steps;
    opts.batch = cfg.dfg.batch;
    opts.lr = cfg.dfg.lr;
    opts.seed = static_cast<uint64_t>(cfg.dfg.seed);
    train_dfg(pred, ns, make_dfg_examples(subset, id_enc), opts);

    const CueStore corpus_cues = compute_cues(corpus, pred, ns, id_enc, cfg.cue);
    CueStore extra_cues;
    if (cfg.fas.use_extra_real)
      extra_cues = compute_cues(extra_pool, pred, ns, id_enc, cfg.cue);
    const CueLookup cues(corpus, corpus_cues);
    char name[32];
    std::snprintf(name, sizeof(name), "%d%%", static_cast<int>(std::lround(100.0 * f)));
    report.legs.push_back(
        train_eval_leg(split, cues, extra_pool, extra_cues, cfg, name, net_seed));
  }
  return report;
}

}  // namespace defas
