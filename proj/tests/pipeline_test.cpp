// SPDX-License-Identifier: Apache-2.0
#include "defas/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "doctest.h"

using namespace defas;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.data.image_size = 16;
  cfg.data.n_domains = 2;
  cfg.data.subjects_per_domain = 2;
  cfg.data.frames_per_video = 2;
  cfg.data.extra_real_domains = 2;
  cfg.data.extra_real_subjects = 2;
  cfg.dfg.channels = 8;
  cfg.dfg.time_dim = 16;
  cfg.dfg.id_tokens = 2;
  cfg.dfg.id_dim = 8;
  cfg.dfg.steps = 20;
  cfg.dfg.batch = 4;
  cfg.cue.t_hat = 40;
  cfg.cue.n_steps = 5;
  cfg.fas.d_model = 16;
  cfg.fas.blocks = 1;
  cfg.fas.heads = 2;
  cfg.fas.cue_dim = 8;
  cfg.fas.ffn_hidden = 32;
  cfg.fas.steps = 16;
  cfg.fas.batch = 8;
  cfg.theory.kl_grid = 5;
  cfg.theory.kl_mc_samples = 2000;
  cfg.theory.kl_dim = 8;
  cfg.theory.pairs = 20;
  return cfg;
}

/// Fresh scratch directory, removed on scope exit.
struct TempRoot {
  fs::path dir;
  TempRoot() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("defas_pipeline_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~TempRoot() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string thrown_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("stages chain in order and reuse completed artifacts") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());

  StageInfo g = p.gen_data();
  CHECK(!g.reused);
  CHECK(fs::exists(g.dir / "stage.json"));
  CHECK(fs::exists(g.dir / "corpus" / "meta.jsonl"));
  CHECK(fs::exists(g.dir / "extra" / "meta.jsonl"));
  CHECK(fs::exists(g.dir / "unknown" / "meta.jsonl"));
  CHECK(p.gen_data().reused);

  StageInfo d = p.train_dfg();
  CHECK(!d.reused);
  CHECK(fs::exists(d.dir / "loss.csv"));
  CHECK(fs::exists(d.dir / "checkpoint" / "manifest.json"));
  CHECK(p.train_dfg().reused);

  StageInfo c = p.cache_cues();
  CHECK(!c.reused);
  CHECK(fs::exists(c.dir / "corpus" / "index.json"));
  CHECK(fs::exists(c.dir / "extra" / "index.json"));
  CHECK(fs::exists(c.dir / "unknown" / "index.json"));
  CHECK(p.cache_cues().reused);

  StageInfo f = p.train_fas();
  CHECK(!f.reused);
  CHECK(fs::exists(f.dir / "train_log.csv"));
  CHECK(p.train_fas().reused);

  // reuse does not rewrite artifacts
  const fs::path probe = g.dir / "corpus" / "meta.jsonl";
  const auto stamp = fs::last_write_time(probe);
  p.gen_data();
  CHECK(fs::last_write_time(probe) == stamp);
}

TEST_CASE("missing prerequisites name the command to run") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());

  CHECK(thrown_message([&] { p.train_dfg(); }).find("run gen-data first") !=
        std::string::npos);
  p.gen_data();
  CHECK(thrown_message([&] { p.cache_cues(); }).find("run train-dfg first") !=
        std::string::npos);
  p.train_dfg();
  CHECK(thrown_message([&] { p.eval_loo(); }).find("run cache-cues first") !=
        std::string::npos);
  p.cache_cues();
  CHECK_NOTHROW(p.eval_loo());
}

TEST_CASE("the same config yields byte-identical evaluation tables") {
  TempRoot tr;
  const RunConfig cfg = tiny_cfg();
  Pipeline p(tr.dir, cfg);
  p.gen_data();
  p.train_dfg();
  p.cache_cues();
  p.eval_loo();
  const std::string first = slurp(p.run_dir() / "loo.csv");
  CHECK(!first.empty());

  // a fresh instance reloads everything from disk and must reproduce it
  Pipeline q(tr.dir, cfg);
  q.eval_loo();
  CHECK(slurp(q.run_dir() / "loo.csv") == first);
}

TEST_CASE("run directory refuses a different resolved config") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());
  p.gen_data();
  p.train_dfg();
  p.cache_cues();
  p.eval_loo();

  Json tampered = read_json(p.run_dir() / "config.json");
  tampered["fas"]["steps"] = 999;
  write_json(p.run_dir() / "config.json", tampered);
  CHECK(thrown_message([&] { p.eval_loo(); }).find("different resolved config") !=
        std::string::npos);
}

TEST_CASE("a directory lock blocks writers until released") {
  TempRoot tr;
  const fs::path d = tr.dir / "locked";
  {
    DirLock lock(d);
    CHECK(fs::exists(d / ".lock"));
    CHECK_THROWS(DirLock{d});
  }
  CHECK(!fs::exists(d / ".lock"));

  Pipeline p(tr.dir, tiny_cfg());
  fs::create_directories(p.corpus_dir());
  std::ofstream(p.corpus_dir() / ".lock") << "424242\n";
  CHECK(thrown_message([&] { p.gen_data(); }).find(".lock") != std::string::npos);
  fs::remove(p.corpus_dir() / ".lock");
  CHECK_NOTHROW(p.gen_data());
}

TEST_CASE("cached cues reload bitwise equal to in-memory computation") {
  TempRoot tr;
  const RunConfig cfg = tiny_cfg();
  {
    Pipeline p(tr.dir, cfg);
    p.gen_data();
    p.train_dfg();
    p.cache_cues();
  }
  Pipeline q(tr.dir, cfg);
  const CueStore& loaded = q.corpus_cues();
  const CueStore direct = compute_cues(q.corpus(), q.predictor(), make_schedule_from(cfg),
                                       make_id_encoder(cfg), cfg.cue);
  REQUIRE(loaded.cues.size() == direct.cues.size());
  for (size_t i = 0; i < loaded.cues.size(); ++i) {
    CHECK(loaded.cues[i].residual.data == direct.cues[i].residual.data);
    CHECK(loaded.cues[i].t_hat_used == direct.cues[i].t_hat_used);
    CHECK(loaded.cues[i].seed == direct.cues[i].seed);
  }
}

TEST_CASE("unknown pool renders mask3d without disturbing the training corpus") {
  const RunConfig cfg = tiny_cfg();
  const auto unknown = build_unknown_pool_from(cfg);
  CHECK(unknown.size() == 8);  // 2 domains x 2 subjects x 2 frames
  for (const auto& s : unknown) {
    CHECK(s.attack == AttackType::mask3d);
    CHECK(s.label == 1);
  }

  // rendering the extra attack must not change the print/replay samples
  const auto base = build_corpus_from(cfg);
  RunConfig ext = cfg;
  ext.data.attacks = "print,replay,mask3d";
  std::vector<SyntheticSample> filtered;
  for (const auto& s : build_corpus_from(ext))
    if (s.attack != AttackType::mask3d) filtered.push_back(s);
  REQUIRE(filtered.size() == base.size());
  for (size_t i = 0; i < base.size(); ++i) {
    CHECK(filtered[i].image.data == base[i].image.data);
    CHECK(filtered[i].seed == base[i].seed);
  }

  // a corpus that already trains on mask3d has nothing held out
  CHECK(build_unknown_pool_from(ext).empty());
}

TEST_CASE("unknown-attack evaluation joins the held-out renders") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());
  p.gen_data();
  p.train_dfg();
  p.cache_cues();
  MetricsReport rep = p.eval_unknown();
  REQUIRE(rep.legs.size() == 2);
  CHECK(rep.legs[0].held_out == "seen_attacks");
  CHECK(rep.legs[1].held_out == "unseen_mask3d");
  CHECK(fs::exists(p.run_dir() / "unknown.csv"));
}

TEST_CASE("timestep ablation defaults to five noising depths") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());
  p.gen_data();
  p.train_dfg();
  MetricsReport rep = p.ablate_tsteps();
  REQUIRE(rep.legs.size() == 5);
  CHECK(rep.legs.front().held_out == "t=100");
  CHECK(rep.legs.back().held_out == "t=20");
  CHECK(fs::exists(p.run_dir() / "tsteps.csv"));
}

TEST_CASE("data ablation defaults to quarter, half, and full pool") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());
  p.gen_data();
  MetricsReport rep = p.ablate_data();
  REQUIRE(rep.legs.size() == 3);
  CHECK(rep.legs[0].held_out == "25%");
  CHECK(rep.legs[1].held_out == "50%");
  CHECK(rep.legs[2].held_out == "100%");
  CHECK(fs::exists(p.run_dir() / "fractions.csv"));
}

TEST_CASE("theory verification provisions its own inputs") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());
  TheoryReport rep = p.verify_theory();

  // stages were provisioned on demand
  CHECK(fs::exists(p.corpus_dir() / "stage.json"));
  CHECK(fs::exists(p.dfg_dir() / "stage.json"));
  CHECK(fs::exists(p.run_dir() / "theory.json"));
  CHECK(fs::exists(p.run_dir() / "theory.txt"));

  const std::vector<std::string> expected = {"kl_closed_vs_mc_3se",
                                             "telescoping_identity_rel",
                                             "min_timestep_vs_scan",
                                             "ddim_oracle_roundtrip_inf",
                                             "single_step_is_one_step_chain",
                                             "delta_eps_trained_over_untrained",
                                             "reconstruction_error_over_bound",
                                             "reconstruction_error_spearman",
                                             "fake_cue_lower_bound_rate",
                                             "real_cue_energy_monotone_violations",
                                             "interior_separability_margin"};
  REQUIRE(rep.checks.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) CHECK(rep.checks[i].name == expected[i]);

  // the exact-arithmetic identities hold at any size or training budget
  for (size_t i = 0; i < 5; ++i) {
    INFO(rep.checks[i].name);
    CHECK(rep.checks[i].pass);
  }
  CHECK(read_json(p.run_dir() / "theory.json").value("pass", !rep.pass()) == rep.pass());
}

TEST_CASE("report aggregates produced tables and lists missing ones") {
  TempRoot tr;
  Pipeline p(tr.dir, tiny_cfg());
  p.gen_data();
  p.train_dfg();
  p.cache_cues();
  p.eval_loo();
  Json rep = p.report();

  CHECK(rep["reports"].contains("loo"));
  CHECK(!rep["reports"]["loo"].empty());
  const auto missing = rep["missing"].get<std::vector<std::string>>();
  CHECK(std::find(missing.begin(), missing.end(), "unknown") != missing.end());
  CHECK(std::find(missing.begin(), missing.end(), "tsteps") != missing.end());
  CHECK(std::find(missing.begin(), missing.end(), "theory") != missing.end());
  CHECK(fs::exists(p.run_dir() / "report.json"));
  CHECK(fs::exists(p.run_dir() / "report.txt"));
}

TEST_CASE("config keys scope exactly the stages they shape") {
  const RunConfig a = tiny_cfg();

  RunConfig b = a;
  b.fas.steps = 99;
  CHECK(b.corpus_key() == a.corpus_key());
  CHECK(b.dfg_key() == a.dfg_key());
  CHECK(b.cue_key() == a.cue_key());
  CHECK(b.fas_key() != a.fas_key());
  CHECK(b.full_key() != a.full_key());

  RunConfig c = a;
  c.dfg.beta_max = 0.123;
  CHECK(c.corpus_key() == a.corpus_key());
  CHECK(c.dfg_key() != a.dfg_key());
  CHECK(c.cue_key() != a.cue_key());

  RunConfig d = a;
  d.data.seed = 7;
  CHECK(d.corpus_key() != a.corpus_key());
  CHECK(d.dfg_key() != a.dfg_key());
  CHECK(d.full_key() != a.full_key());

  // serialization round-trips to the same hash, independent of key order
  RunConfig e;
  e.apply(a.to_json());
  CHECK(e.full_key() == a.full_key());
  RunConfig f, g;
  f.apply(Json::parse(R"({"fas": {"steps": 33, "batch": 4}})"));
  g.apply(Json::parse(R"({"fas": {"batch": 4, "steps": 33}})"));
  CHECK(f.full_key() == g.full_key());

  RunConfig h;
  CHECK_THROWS(h.apply(Json::parse(R"({"dfg": {"bogus": 1}})")));
}

}  // TEST_SUITE("pipeline")
