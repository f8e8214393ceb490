// SPDX-License-Identifier: Apache-2.0
// Exercises the installed command-line binary as a subprocess: exit codes,
// the machine-readable error record on stderr, and stage idempotence.
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "defas/config.hpp"
#include "defas/io.hpp"
#include "doctest.h"

using namespace defas;
namespace fs = std::filesystem;

namespace {

struct TempRoot {
  fs::path dir;
  TempRoot() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("defas_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~TempRoot() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

int run_cli(const std::string& args, const fs::path& stderr_to = {}) {
  std::string cmd = std::string(DEFAS_CLI_PATH) + " " + args + " > /dev/null";
  cmd += stderr_to.empty() ? " 2> /dev/null" : " 2> " + stderr_to.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json tiny_config_json() {
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
  cfg.dfg.steps = 10;
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
  return cfg.to_json();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits zero") { CHECK(run_cli("--help") == 0); }

TEST_CASE("an unknown subcommand exits one") { CHECK(run_cli("frobnicate") == 1); }

TEST_CASE("a missing prerequisite reports a machine-readable error") {
  TempRoot tr;
  const fs::path err = tr.dir / "stderr.txt";
  CHECK(run_cli("eval-loo --out " + (tr.dir / "artifacts").string(), err) == 1);

  const Json j = Json::parse(slurp(err));
  CHECK(j.value("command", "") == "eval-loo");
  CHECK(j.value("error", "").find("run gen-data first") != std::string::npos);
}

TEST_CASE("gen-data succeeds and re-running reuses the artifact") {
  TempRoot tr;
  const fs::path cfg_path = tr.dir / "config.json";
  write_json(cfg_path, tiny_config_json());
  const std::string args =
      "gen-data --config " + cfg_path.string() + " --out " + (tr.dir / "artifacts").string();

  CHECK(run_cli(args) == 0);
  CHECK(fs::exists(tr.dir / "artifacts" / "corpus"));
  CHECK(run_cli(args) == 0);
}

TEST_CASE("a failed theory verification exits with the dedicated code") {
  TempRoot tr;
  Json cfg = tiny_config_json();
  // negative slack collapses the reconstruction bound to zero, which no
  // trained predictor can meet, so the report must fail deterministically
  cfg["theory"]["slack"] = -1.0;
  const fs::path cfg_path = tr.dir / "config.json";
  write_json(cfg_path, cfg);

  CHECK(run_cli("verify-theory --config " + cfg_path.string() + " --out " +
                (tr.dir / "artifacts").string()) == 2);
}

}  // TEST_SUITE("cli")
