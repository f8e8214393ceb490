// SPDX-License-Identifier: Apache-2.0
// Command-line driver for the staged liveness pipeline. Each subcommand
// produces or consumes artifacts under the --out root; see the stage layout
// in pipeline.hpp. Errors print one machine-readable JSON line on stderr and
// exit 1; failed theory verification exits 2.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "defas/pipeline.hpp"

namespace {

void print_stage(const char* what, const defas::StageInfo& st) {
  std::printf("%s: %s (%s)\n", what, st.dir.string().c_str(),
              st.reused ? "reused" : "built");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "staged face-liveness pipeline: synthetic corpus, real-only de-fake "
      "generator, residual-cue classifier, protocol evaluation, and numeric "
      "verification of the reconstruction bounds"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "artifacts";
  int64_t seed = -1;
  int t_hat = -1;
  double fraction = -1.0;
  int held_out = -1;

  app.add_option("--config", config_path,
                 "JSON file with flat dotted keys, e.g. {\"fas.steps\": 400}");
  app.add_option("--seed", seed, "override the classifier seed (fas.seed)");
  app.add_option("--out", out_dir, "artifact root directory")->capture_default_str();

  app.add_subcommand("gen-data", "render the corpus and the extra real pool");
  app.add_subcommand("train-dfg", "train the de-fake generator on the real pool");
  CLI::App* cue = app.add_subcommand("cache-cues", "compute and cache residual cues");
  cue->add_option("--t-hat", t_hat, "override the noising depth (cue.t_hat)");
  app.add_subcommand("train-fas", "train the classifier on the full corpus");
  app.add_subcommand("eval-loo", "leave-one-domain-out protocol");
  app.add_subcommand("eval-unknown", "held-out attack-type protocol");
  CLI::App* abt = app.add_subcommand("ablate-tsteps",
                                     "recompute cues per noising depth and evaluate each");
  abt->add_option("--t-hat", t_hat, "single depth instead of the default grid");
  abt->add_option("--held-out", held_out, "held-out domain id (default: last)");
  CLI::App* abd = app.add_subcommand("ablate-data",
                                     "retrain the generator per pool fraction and evaluate each");
  abd->add_option("--fraction", fraction, "single fraction instead of {0.25, 0.5, 1.0}");
  abd->add_option("--held-out", held_out, "held-out domain id (default: last)");
  app.add_subcommand("verify-theory",
                     "numeric checks of the reconstruction-bound analysis; "
                     "provisions its own prerequisites");
  app.add_subcommand("report", "aggregate whatever the run directory holds");

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    defas::RunConfig cfg;
    if (!config_path.empty()) cfg.apply(defas::read_json(config_path));
    if (seed >= 0) cfg.fas.seed = seed;
    if (t_hat > 0 && cmd == "cache-cues") cfg.cue.t_hat = t_hat;

    defas::Pipeline pipe(out_dir, cfg);
    if (cmd == "gen-data") {
      print_stage("corpus", pipe.gen_data());
    } else if (cmd == "train-dfg") {
      print_stage("generator", pipe.train_dfg());
    } else if (cmd == "cache-cues") {
      print_stage("cues", pipe.cache_cues());
    } else if (cmd == "train-fas") {
      print_stage("classifier", pipe.train_fas());
    } else if (cmd == "eval-loo") {
      std::printf("%s", pipe.eval_loo().text_table().c_str());
      std::printf("reports: %s\n", pipe.run_dir().string().c_str());
    } else if (cmd == "eval-unknown") {
      std::printf("%s", pipe.eval_unknown().text_table().c_str());
      std::printf("reports: %s\n", pipe.run_dir().string().c_str());
    } else if (cmd == "ablate-tsteps") {
      std::vector<int> list;
      if (t_hat > 0) list.push_back(t_hat);
      std::printf("%s", pipe.ablate_tsteps(list, held_out).text_table().c_str());
      std::printf("reports: %s\n", pipe.run_dir().string().c_str());
    } else if (cmd == "ablate-data") {
      std::vector<double> list;
      if (fraction > 0) list.push_back(fraction);
      std::printf("%s", pipe.ablate_data(list, held_out).text_table().c_str());
      std::printf("reports: %s\n", pipe.run_dir().string().c_str());
    } else if (cmd == "verify-theory") {
      const defas::TheoryReport rep = pipe.verify_theory();
      std::printf("%s", rep.text().c_str());
      std::printf("reports: %s\n", pipe.run_dir().string().c_str());
      if (!rep.pass()) return 2;
    } else if (cmd == "report") {
      pipe.report();
      std::printf("%s\n", defas::read_json(pipe.run_dir() / "report.json").dump(2).c_str());
    }
    return 0;
  } catch (const std::exception& e) {
    const defas::Json err{{"error", e.what()}, {"command", cmd}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
}
