// SPDX-License-Identifier: Apache-2.0
#include "defas/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>
#include <utility>

#include "defas/check.hpp"
#include "defas/dgtrain.hpp"
#include "defas/oanet.hpp"

namespace defas {

namespace fs = std::filesystem;

DirLock::DirLock(const fs::path& dir) {
  fs::create_directories(dir);
  file_ = dir / ".lock";
  std::FILE* f = std::fopen(file_.c_str(), "wx");
  DEFAS_CHECK(f != nullptr, "directory ", dir.string(), " is locked by another command; ",
              "remove ", file_.string(), " if that run is dead");
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

Pipeline::Pipeline(fs::path root, RunConfig cfg) : root_(std::move(root)), cfg_(std::move(cfg)) {}

fs::path Pipeline::corpus_dir() const { return root_ / "corpus" / cfg_.corpus_key(); }
fs::path Pipeline::dfg_dir() const { return root_ / "dfg" / cfg_.dfg_key(); }
fs::path Pipeline::cue_dir() const { return root_ / "cues" / cfg_.cue_key(); }
fs::path Pipeline::fas_dir() const { return root_ / "fas" / cfg_.fas_key(); }
fs::path Pipeline::run_dir() const { return root_ / "run" / cfg_.full_key(); }

StageInfo Pipeline::stage_begin(const fs::path& dir, const std::string& key) const {
  const fs::path marker = dir / "stage.json";
  if (fs::exists(marker)) {
    const Json j = read_json(marker);
    if (j.value("key", "") == key && j.value("complete", false)) return {dir, true};
  }
  DEFAS_CHECK(!fs::exists(dir / ".lock"), "directory ", dir.string(),
              " is locked by another command; remove the .lock file if that run is dead");
  fs::remove_all(dir);  // partial artifact from an interrupted run
  fs::create_directories(dir);
  return {dir, false};
}

void Pipeline::stage_finish(const fs::path& dir, const std::string& key, Json info) const {
  info["key"] = key;
  info["complete"] = true;
  write_json(dir / "stage.json", info);
}

void Pipeline::require_stage(const fs::path& dir, const std::string& key,
                             const std::string& command) const {
  const fs::path marker = dir / "stage.json";
  bool ok = fs::exists(marker);
  if (ok) {
    const Json j = read_json(marker);
    ok = j.value("key", "") == key && j.value("complete", false);
  }
  if (!ok) throw Error("missing artifact " + dir.string() + "; run " + command + " first");
}

// ---- stages ----

StageInfo Pipeline::gen_data() {
  const fs::path dir = corpus_dir();
  StageInfo st = stage_begin(dir, cfg_.corpus_key());
  if (st.reused) return st;
  DirLock lock(dir);
  const auto corpus = build_corpus_from(cfg_);
  const auto pool = build_extra_pool_from(cfg_);
  const auto unknown = build_unknown_pool_from(cfg_);
  export_corpus(dir / "corpus", corpus);
  export_corpus(dir / "extra", pool);
  export_corpus(dir / "unknown", unknown);
  stage_finish(dir, cfg_.corpus_key(),
               Json{{"n_corpus", corpus.size()},
                    {"n_extra", pool.size()},
                    {"n_unknown", unknown.size()}});
  corpus_.reset();
  extra_pool_.reset();
  unknown_pool_.reset();
  return st;
}

StageInfo Pipeline::train_dfg() {
  require_stage(corpus_dir(), cfg_.corpus_key(), "gen-data");
  const fs::path dir = dfg_dir();
  StageInfo st = stage_begin(dir, cfg_.dfg_key());
  if (st.reused) return st;
  DirLock lock(dir);

  const auto subset = select_pool_fraction(extra_pool(), cfg_.dfg.extra_frac,
                                           static_cast<uint64_t>(cfg_.dfg.seed));
  const NoiseSchedule ns = make_schedule_from(cfg_);
  const IdentityEncoder id_enc = make_id_encoder(cfg_);
  NoisePredictor pred(dfg_spec_from(cfg_), static_cast<uint64_t>(cfg_.dfg.seed));

  CsvWriter loss_csv(dir / "loss.csv", {"step", "loss"});
  DfgTrainOpts opts;
  opts.steps = cfg_.dfg.steps;
  opts.batch = cfg_.dfg.batch;
  opts.lr = cfg_.dfg.lr;
  opts.seed = static_cast<uint64_t>(cfg_.dfg.seed);
  opts.on_step = [&](int step, double loss) {
    loss_csv.row_values({static_cast<double>(step), loss});
  };
  defas::train_dfg(pred, ns, make_dfg_examples(subset, id_enc), opts);

  save_checkpoint(dir / "checkpoint", pred.params(),
                  Json{{"config_hash", cfg_.dfg_key()},
                       {"schedule", Json{{"T", cfg_.dfg.T},
                                         {"beta_min", cfg_.dfg.beta_min},
                                         {"beta_max", cfg_.dfg.beta_max}}},
                       {"trained", true},
                       {"steps", cfg_.dfg.steps},
                       {"pool_size", subset.size()}});
  stage_finish(dir, cfg_.dfg_key(), Json{{"pool_size", subset.size()}});
  predictor_.reset();
  return st;
}

StageInfo Pipeline::cache_cues() {
  require_stage(corpus_dir(), cfg_.corpus_key(), "gen-data");
  require_stage(dfg_dir(), cfg_.dfg_key(), "train-dfg");
  const fs::path dir = cue_dir();
  StageInfo st = stage_begin(dir, cfg_.cue_key());
  if (st.reused) return st;
  DirLock lock(dir);

  const NoiseSchedule ns = make_schedule_from(cfg_);
  const IdentityEncoder id_enc = make_id_encoder(cfg_);
  defas::cache_cues(corpus(), predictor(), ns, id_enc, cfg_.cue, cfg_.cue_key(),
                    dir / "corpus");
  defas::cache_cues(extra_pool(), predictor(), ns, id_enc, cfg_.cue, cfg_.cue_key(),
                    dir / "extra");
  defas::cache_cues(unknown_pool(), predictor(), ns, id_enc, cfg_.cue, cfg_.cue_key(),
                    dir / "unknown");
  stage_finish(dir, cfg_.cue_key(),
               Json{{"n_corpus", corpus().size()},
                    {"n_extra", extra_pool().size()},
                    {"n_unknown", unknown_pool().size()}});
  corpus_cues_.reset();
  extra_cues_.reset();
  unknown_cues_.reset();
  return st;
}

StageInfo Pipeline::train_fas() {
  require_stage(corpus_dir(), cfg_.corpus_key(), "gen-data");
  require_stage(cue_dir(), cfg_.cue_key(), "cache-cues");
  const fs::path dir = fas_dir();
  StageInfo st = stage_begin(dir, cfg_.fas_key());
  if (st.reused) return st;
  DirLock lock(dir);

  static const std::vector<SyntheticSample> kNoPool;
  static const CueStore kNoCues;
  const bool extra = cfg_.fas.use_extra_real;
  OaNet net(oa_spec_from(cfg_), static_cast<uint64_t>(cfg_.fas.seed));
  const FasTrainResult result =
      defas::train_fas(net, corpus(), corpus_cues(), extra ? extra_pool() : kNoPool,
                       extra ? extra_cues() : kNoCues, cfg_.fas);

  save_checkpoint(dir / "checkpoint", net.params(),
                  Json{{"config_hash", cfg_.fas_key()},
                       {"mode", cfg_.fas.mode},
                       {"trained", true},
                       {"best_step", result.best_step},
                       {"best_val_hter", result.best_val_hter},
                       {"best_val_auc", result.best_val_auc}});
  write_training_log(dir / "train_log.csv", result);
  stage_finish(dir, cfg_.fas_key(),
               Json{{"best_step", result.best_step},
                    {"best_val_hter", result.best_val_hter},
                    {"best_val_auc", result.best_val_auc},
                    {"val_size", result.val_size}});
  return st;
}

// ---- artifact loading ----

const std::vector<SyntheticSample>& Pipeline::corpus() {
  if (!corpus_) {
    require_stage(corpus_dir(), cfg_.corpus_key(), "gen-data");
    corpus_ = import_corpus(corpus_dir() / "corpus");
  }
  return *corpus_;
}

const std::vector<SyntheticSample>& Pipeline::extra_pool() {
  if (!extra_pool_) {
    require_stage(corpus_dir(), cfg_.corpus_key(), "gen-data");
    extra_pool_ = import_corpus(corpus_dir() / "extra");
  }
  return *extra_pool_;
}

const std::vector<SyntheticSample>& Pipeline::unknown_pool() {
  if (!unknown_pool_) {
    require_stage(corpus_dir(), cfg_.corpus_key(), "gen-data");
    unknown_pool_ = import_corpus(corpus_dir() / "unknown");
  }
  return *unknown_pool_;
}

const NoisePredictor& Pipeline::predictor() {
  if (!predictor_) {
    require_stage(dfg_dir(), cfg_.dfg_key(), "train-dfg");
    predictor_ = std::make_unique<NoisePredictor>(dfg_spec_from(cfg_),
                                                  static_cast<uint64_t>(cfg_.dfg.seed));
    load_checkpoint(dfg_dir() / "checkpoint", predictor_->params());
  }
  return *predictor_;
}

const CueStore& Pipeline::corpus_cues() {
  if (!corpus_cues_) {
    require_stage(cue_dir(), cfg_.cue_key(), "cache-cues");
    corpus_cues_ = load_cached_cues(corpus(), cfg_.cue, cfg_.cue_key(), cue_dir() / "corpus");
  }
  return *corpus_cues_;
}

const CueStore& Pipeline::extra_cues() {
  if (!extra_cues_) {
    require_stage(cue_dir(), cfg_.cue_key(), "cache-cues");
    extra_cues_ =
        load_cached_cues(extra_pool(), cfg_.cue, cfg_.cue_key(), cue_dir() / "extra");
  }
  return *extra_cues_;
}

const CueStore& Pipeline::unknown_cues() {
  if (!unknown_cues_) {
    require_stage(cue_dir(), cfg_.cue_key(), "cache-cues");
    unknown_cues_ =
        load_cached_cues(unknown_pool(), cfg_.cue, cfg_.cue_key(), cue_dir() / "unknown");
  }
  return *unknown_cues_;
}

// ---- run directory ----

fs::path Pipeline::ensure_run_dir() {
  const fs::path dir = run_dir();
  fs::create_directories(dir);
  const Json resolved = cfg_.to_json();
  const fs::path cfg_path = dir / "config.json";
  if (fs::exists(cfg_path)) {
    DEFAS_CHECK(read_json(cfg_path) == resolved, "run directory ", dir.string(),
                " holds a different resolved config; refusing to overwrite it");
  } else {
    write_json(cfg_path, resolved);
  }
  return dir;
}

void Pipeline::write_report(const fs::path& dir, const std::string& name,
                            const MetricsReport& rep) const {
  rep.write_csv(dir / (name + ".csv"));
  std::ofstream txt(dir / (name + ".txt"));
  txt << rep.text_table();
}

// ---- evaluation commands ----

MetricsReport Pipeline::eval_loo() {
  const auto& crp = corpus();
  const CueStore& ccues = corpus_cues();
  const auto& pool = extra_pool();
  const CueStore& ecues = extra_cues();
  const fs::path dir = ensure_run_dir();
  DirLock lock(dir);
  MetricsReport rep = run_loo(crp, ccues, pool, ecues, cfg_);
  write_report(dir, "loo", rep);
  return rep;
}

MetricsReport Pipeline::eval_unknown() {
  std::vector<SyntheticSample> all = corpus();
  CueStore cues = corpus_cues();
  const auto& unk = unknown_pool();
  const CueStore& ucues = unknown_cues();
  all.insert(all.end(), unk.begin(), unk.end());
  cues.cues.insert(cues.cues.end(), ucues.cues.begin(), ucues.cues.end());
  const auto& pool = extra_pool();
  const CueStore& ecues = extra_cues();
  const fs::path dir = ensure_run_dir();
  DirLock lock(dir);
  MetricsReport rep = run_unknown_attack(all, cues, pool, ecues, cfg_);
  write_report(dir, "unknown", rep);
  return rep;
}

MetricsReport Pipeline::ablate_tsteps(std::vector<int> t_hat_list, int held_out) {
  if (t_hat_list.empty()) {
    const int T = cfg_.dfg.T;
    for (double f : {1.0, 0.8, 0.6, 0.4, 0.2}) {
      const int t = std::max(1, static_cast<int>(std::lround(f * T)));
      if (t_hat_list.empty() || t_hat_list.back() != t) t_hat_list.push_back(t);
    }
  }
  if (held_out < 0) held_out = cfg_.data.n_domains - 1;
  const auto& crp = corpus();
  const auto& pool = extra_pool();
  const NoisePredictor& pred = predictor();
  const NoiseSchedule ns = make_schedule_from(cfg_);
  const IdentityEncoder id_enc = make_id_encoder(cfg_);
  const fs::path dir = ensure_run_dir();
  DirLock lock(dir);
  MetricsReport rep = ablate_timesteps(crp, pool, pred, ns, id_enc, t_hat_list, held_out, cfg_);
  write_report(dir, "tsteps", rep);
  return rep;
}

MetricsReport Pipeline::ablate_data(std::vector<double> fractions, int held_out) {
  if (fractions.empty()) fractions = {0.25, 0.5, 1.0};
  if (held_out < 0) held_out = cfg_.data.n_domains - 1;
  const auto& crp = corpus();
  const auto& pool = extra_pool();
  const fs::path dir = ensure_run_dir();
  DirLock lock(dir);
  MetricsReport rep = ablate_data_fraction(crp, pool, fractions, held_out, cfg_);
  write_report(dir, "fractions", rep);
  return rep;
}

// ---- theory verification ----

namespace {

TheoryCheck upper_check(const std::string& name, double measured, double bound) {
  TheoryCheck c;
  c.name = name;
  c.predicted = bound;
  c.measured = measured;
  c.tolerance = bound;
  c.pass = measured <= bound;
  return c;
}

TheoryCheck lower_check(const std::string& name, double measured, double threshold) {
  TheoryCheck c;
  c.name = name;
  c.predicted = threshold;
  c.measured = measured;
  c.tolerance = threshold;
  c.pass = measured >= threshold;
  return c;
}

}  // namespace

TheoryReport Pipeline::verify_theory() {
  // Doubles as the end-to-end smoke command, so it provisions what it needs.
  gen_data();
  train_dfg();

  const auto& crp = corpus();
  const NoisePredictor& pred = predictor();
  const NoiseSchedule ns = make_schedule_from(cfg_);
  const IdentityEncoder id_enc = make_id_encoder(cfg_);
  const Rng root(static_cast<uint64_t>(cfg_.theory.seed));
  const int T = ns.T;

  TheoryReport rep;
  rep.note =
      "pair distances are squared Euclidean norms over the latent; "
      "predictor error is estimated on forward-sampled real latents; "
      "the slack factor absorbs finite-sample error of that estimate";

  // closed-form KL against the Monte-Carlo oracle, worst point of the grid
  {
    Rng r = root.child(1);
    const int dim = cfg_.theory.kl_dim;
    const double seps[] = {0.0, 0.05, 0.15, 0.4, 1.0};
    double worst = 0.0;
    for (int i = 0; i < cfg_.theory.kl_grid; ++i) {
      const int t = 1 + (i * (T - 1)) / std::max(1, cfg_.theory.kl_grid - 1);
      Mat z0r(dim, 1), diff(dim, 1);
      r.fill_normal(z0r.data(), static_cast<size_t>(dim));
      r.fill_normal(diff.data(), static_cast<size_t>(dim));
      const Mat z0f = z0r + seps[i % 5] * diff;
      const double closed = kl_closed_form(z0r, z0f, ns, t);
      const McEstimate mc = kl_monte_carlo(z0r, z0f, ns, t, cfg_.theory.kl_mc_samples, r);
      const double err = std::abs(closed - mc.estimate);
      const double ratio = mc.std_error > 0 ? err / (3.0 * mc.std_error)
                                            : (err == 0.0 ? 0.0 : 1e9);
      worst = std::max(worst, ratio);
    }
    rep.checks.push_back(upper_check("kl_closed_vs_mc_3se", worst, 1.0));
  }

  // per-step coefficient sum telescopes to the bound coefficient
  {
    double worst = 0.0;
    for (int t = 1; t <= T; ++t) {
      const double direct = ns.bound_coef(t);
      worst = std::max(worst, std::abs(telescoped_coef_sum(ns, t) - direct) / direct);
    }
    rep.checks.push_back(upper_check("telescoping_identity_rel", worst, 1e-10));
  }

  // closed-form minimal time step against the exhaustive scan
  {
    int mismatches = 0;
    for (double eps_kl : {1e-4, 1e-3, 1e-2, 0.1, 1.0}) {
      for (double diff_sq : {0.0, 0.01, 0.1, 1.0, 10.0}) {
        if (min_timestep_for_kl(eps_kl, diff_sq, ns) !=
            min_timestep_scan_oracle(eps_kl, diff_sq, ns))
          ++mismatches;
      }
    }
    rep.checks.push_back(upper_check("min_timestep_vs_scan", mismatches, 0.0));
  }

  // deterministic reverse chain inverts the forward process given the oracle
  {
    Rng r = root.child(4);
    const int n = cfg_.data.image_size * cfg_.data.image_size;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      Mat z0(n, cfg_.data.channels), eps(n, cfg_.data.channels);
      r.fill_normal(z0.data(), static_cast<size_t>(z0.size()));
      r.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      const int t_hat = r.uniform_int(1, T);
      const Mat z_that = forward_sample(ns, z0, t_hat, eps);
      const OracleEps oracle(ns, z0);
      const Mat back = generate(ns, oracle, z_that, t_hat, t_hat, Mat());
      worst = std::max(worst, (back - z0).cwiseAbs().maxCoeff());
    }
    rep.checks.push_back(upper_check("ddim_oracle_roundtrip_inf", worst, 1e-6));
  }

  // one-step chain and the substitution formula agree bitwise
  {
    Rng r = root.child(5);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const auto& s = crp[static_cast<size_t>(r.uniform_int(0, (int)crp.size() - 1))];
      const Mat z0 = image_to_latent(s.image);
      Mat eps(z0.rows(), z0.cols());
      r.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      const int t = r.uniform_int(1, T);
      const Mat z_t = forward_sample(ns, z0, t, eps);
      const Mat id = id_enc.encode(s.image);
      const Mat a = single_step_reconstruct(ns, pred, z_t, t, id);
      const Mat b = generate(ns, pred, z_t, t, 1, id);
      worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
    }
    rep.checks.push_back(upper_check("single_step_is_one_step_chain", worst, 0.0));
  }

  // real samples never seen by the generator: corpus reals, spread over the
  // whole corpus so every domain contributes
  const auto spread_examples = [&](int want_label, size_t want_n) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < crp.size(); ++i)
      if (crp[i].label == want_label) idx.push_back(i);
    std::vector<DfgExample> out;
    const size_t stride = std::max<size_t>(1, idx.size() / want_n);
    for (size_t i = 0; i < idx.size() && out.size() < want_n; i += stride) {
      const auto& s = crp[idx[i]];
      out.push_back({image_to_latent(s.image), id_enc.encode(s.image), want_label == 0});
    }
    return out;
  };
  const std::vector<DfgExample> held_out_reals = spread_examples(0, 32);

  std::vector<int> t_list;
  for (int t = cfg_.theory.t_min; t <= cfg_.theory.t_max; t += 10) t_list.push_back(t);

  // training lowers the prediction-error ceiling
  double delta_eps = 0.0;
  {
    Rng r = root.child(6);
    delta_eps = estimate_delta_eps(pred, held_out_reals, ns, t_list, 2, r);
    const NoisePredictor fresh(dfg_spec_from(cfg_), static_cast<uint64_t>(cfg_.dfg.seed) + 1);
    Rng r2 = root.child(6);
    const double untrained = estimate_delta_eps(fresh, held_out_reals, ns, t_list, 2, r2);
    rep.checks.push_back(upper_check("delta_eps_trained_over_untrained",
                                     delta_eps / untrained, 1.0));
  }

  // reconstruction error under the coefficient bound, and growing with t
  {
    Rng r = root.child(7);
    const auto curve = reconstruction_error_curve(pred, held_out_reals, ns, t_list,
                                                  cfg_.cue.n_steps, 2, delta_eps,
                                                  cfg_.theory.slack, r);
    double worst = 0.0;
    std::vector<double> ts, errs;
    for (const ReconPoint& p : curve) {
      worst = std::max(worst, p.bound > 0 ? p.mean_err / p.bound : 1e9);
      ts.push_back(p.t);
      errs.push_back(p.mean_err);
    }
    rep.checks.push_back(upper_check("reconstruction_error_over_bound", worst, 1.0));
    rep.checks.push_back(lower_check("reconstruction_error_spearman",
                                     spearman_rho(ts, errs), 0.9));
  }

  // fake reconstruction error exceeds trace energy minus the real error
  {
    std::map<std::tuple<int, int, int>, const SyntheticSample*> reals;
    for (const auto& s : crp)
      if (s.label == 0) reals[{s.domain_id, s.subject_id, s.frame}] = &s;
    std::vector<LatentPair> pairs;
    for (const auto& s : crp) {
      if (s.label != 1) continue;
      const auto it = reals.find({s.domain_id, s.subject_id, s.frame});
      if (it == reals.end()) continue;
      pairs.push_back({image_to_latent(it->second->image), image_to_latent(s.image),
                       id_enc.encode(s.image)});
    }
    const size_t want = static_cast<size_t>(cfg_.theory.pairs);
    if (pairs.size() > want) {
      std::vector<LatentPair> sub;
      const size_t stride = pairs.size() / want;
      for (size_t i = 0; i < pairs.size() && sub.size() < want; i += stride)
        sub.push_back(std::move(pairs[i]));
      pairs = std::move(sub);
    }
    Rng r = root.child(9);
    const FakeCueCheck fc = fake_cue_bound_check(pred, pairs, ns, cfg_.cue.t_hat,
                                                 cfg_.cue.n_steps, 1, 0.95, r);
    rep.checks.push_back(lower_check("fake_cue_lower_bound_rate", fc.hold_rate, 0.95));
  }

  // the de-fake strength trade-off: noise grows with t_hat, separation peaks
  // strictly inside the range
  {
    const std::vector<DfgExample> reals = spread_examples(0, 32);
    const std::vector<DfgExample> fakes = spread_examples(1, 32);
    std::vector<int> sweep_t = {1, T / 5, 2 * T / 5, 3 * T / 5, 4 * T / 5, T};
    Rng r = root.child(10);
    const auto sweep = tradeoff_sweep(pred, reals, fakes, ns, sweep_t, cfg_.cue.n_steps, r);
    int violations = 0;
    for (size_t i = 0; i + 1 < sweep.size(); ++i)
      if (sweep[i + 1].real_energy < sweep[i].real_energy * 0.98) ++violations;
    rep.checks.push_back(upper_check("real_cue_energy_monotone_violations", violations, 0.0));
    double interior = 0.0;
    for (size_t i = 1; i + 1 < sweep.size(); ++i)
      interior = std::max(interior, sweep[i].separability_auc);
    const double margin = std::min(interior - sweep.front().separability_auc,
                                   interior - sweep.back().separability_auc);
    rep.checks.push_back(lower_check("interior_separability_margin", margin, 1e-9));
  }

  const fs::path dir = ensure_run_dir();
  DirLock lock(dir);
  write_json(dir / "theory.json", rep.to_json());
  std::ofstream txt(dir / "theory.txt");
  txt << rep.text();
  return rep;
}

// ---- aggregation ----

Json Pipeline::report() {
  const fs::path dir = ensure_run_dir();
  DirLock lock(dir);
  Json out;
  out["keys"] = Json{{"corpus", cfg_.corpus_key()},
                     {"dfg", cfg_.dfg_key()},
                     {"cues", cfg_.cue_key()},
                     {"fas", cfg_.fas_key()},
                     {"run", cfg_.full_key()}};
  out["config"] = cfg_.to_json();

  Json reports = Json::object();
  std::vector<std::string> missing;
  std::string text = "run " + cfg_.full_key() + "\n";
  for (const std::string name : {"loo", "unknown", "tsteps", "fractions"}) {
    const fs::path csv = dir / (name + ".csv");
    if (!fs::exists(csv)) {
      missing.push_back(name);
      continue;
    }
    const auto rows = read_csv(csv);
    Json rows_json = Json::array();
    for (size_t i = 1; i < rows.size(); ++i) {
      Json row;
      for (size_t c = 0; c < rows[0].size() && c < rows[i].size(); ++c)
        row[rows[0][c]] = rows[i][c];
      rows_json.push_back(row);
    }
    reports[name] = rows_json;
    if (!rows.empty() && rows.size() > 1) {
      const auto& mean = rows.back();
      text += "  " + name + ": " + mean[0] + " HTER " + mean[1] + "% AUC " + mean[2] + "%\n";
    }
  }
  const fs::path theory_path = dir / "theory.json";
  if (fs::exists(theory_path)) {
    reports["theory"] = read_json(theory_path);
    text += std::string("  theory: ") +
            (reports["theory"].value("pass", false) ? "pass" : "FAIL") + "\n";
  } else {
    missing.push_back("theory");
  }
  out["reports"] = reports;
  out["missing"] = missing;
  for (const auto& m : missing) text += "  " + m + ": not produced yet\n";

  write_json(dir / "report.json", out);
  std::ofstream txt_out(dir / "report.txt");
  txt_out << text;
  return out;
}

}  // namespace defas
