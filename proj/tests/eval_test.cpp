// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "defas/eval.hpp"
#include "defas/io.hpp"
#include "defas/rng.hpp"

using namespace defas;

namespace {

ScoredSet random_set(Rng& rng, int n, int quant_levels) {
  ScoredSet s;
  for (int i = 0; i < n; ++i) {
    double sc = rng.uniform();
    if (quant_levels > 0) {
      sc = std::round(sc * quant_levels) / quant_levels;  // force ties
    }
    s.add(sc, rng.uniform() < 0.5 ? 1 : 0);
  }
  // ensure both classes
  s.labels[0] = 0;
  s.labels[1] = 1;
  return s;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("auc on separated, tied, and random scores") {
  ScoredSet sep;
  for (int i = 0; i < 20; ++i) sep.add(0.9 + 0.001 * i, 1);
  for (int i = 0; i < 30; ++i) sep.add(0.1 + 0.001 * i, 0);
  CHECK(auc(sep) == 1.0);

  ScoredSet flat;
  for (int i = 0; i < 10; ++i) flat.add(0.5, i % 2);
  CHECK(auc(flat) == 0.5);

  Rng rng(51);
  ScoredSet rnd;
  for (int i = 0; i < 10000; ++i) rnd.add(rng.uniform(), rng.uniform() < 0.5 ? 1 : 0);
  CHECK(auc(rnd) == doctest::Approx(0.5).epsilon(0.04));

  ScoredSet single;
  single.add(0.2, 0);
  single.add(0.4, 0);
  CHECK_THROWS_AS(auc(single), Error);
}

TEST_CASE("auc equals the pairwise oracle exactly on 50 randomized sets") {
  Rng rng(52);
  for (int rep = 0; rep < 50; ++rep) {
    int n = rng.uniform_int(5, 200);
    int quant = rep % 3 == 0 ? 8 : (rep % 3 == 1 ? 0 : 30);
    ScoredSet s = random_set(rng, n, quant);
    CHECK(auc(s) == auc_pairwise_oracle(s));
  }
}

TEST_CASE("hter_at implements the stated FAR and FRR definitions") {
  ScoredSet s;
  s.add(0.4, 1);  // one fake under the threshold: accepted
  for (int i = 0; i < 9; ++i) s.add(0.6, 1);
  for (int i = 0; i < 8; ++i) s.add(0.3, 0);
  s.add(0.7, 0);  // two reals at/over: rejected
  s.add(0.5, 0);
  HterResult r = hter_at(s, 0.5);
  CHECK(r.far == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.frr == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.hter == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("hter on separated and random scores") {
  ScoredSet sep;
  for (int i = 0; i < 15; ++i) sep.add(0.8 + 0.001 * i, 1);
  for (int i = 0; i < 15; ++i) sep.add(0.2 + 0.001 * i, 0);
  HterResult r = hter(sep);
  CHECK(r.hter == 0.0);
  CHECK(r.threshold > 0.215);
  CHECK(r.threshold < 0.8);

  Rng rng(53);
  ScoredSet rnd;
  for (int i = 0; i < 10000; ++i) rnd.add(rng.uniform(), rng.uniform() < 0.5 ? 1 : 0);
  CHECK(hter(rnd).hter == doctest::Approx(0.5).epsilon(0.04));

  ScoredSet single;
  single.add(0.2, 1);
  CHECK_THROWS_AS(hter(single), Error);
}

TEST_CASE("hter equals the exhaustive scan oracle exactly on 50 randomized sets") {
  Rng rng(54);
  for (int rep = 0; rep < 50; ++rep) {
    int n = rng.uniform_int(4, 200);
    int quant = rep % 2 ? 12 : 0;
    ScoredSet s = random_set(rng, n, quant);
    HterResult fast = hter(s);
    HterResult slow = hter_scan_oracle(s);
    CHECK(fast.hter == slow.hter);
    CHECK(fast.far == slow.far);
    CHECK(fast.frr == slow.frr);
    CHECK(fast.threshold == slow.threshold);
  }
}

TEST_CASE("frame sampling rules") {
  CHECK(frame_sample(10, 10) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(frame_sample(19, 10) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18});
  CHECK(frame_sample(3, 10) == std::vector<int>{0, 1, 2});
  CHECK(frame_sample(1, 10) == std::vector<int>{0});
  CHECK(frame_sample(5, 1) == std::vector<int>{0});
  CHECK_THROWS_AS(frame_sample(0, 10), Error);
}

TEST_CASE("report mean row and serialization") {
  MetricsReport rep;
  rep.title = "protocol";
  rep.config_hash = "cafef00d";
  rep.legs = {{"alpha", 10.0, 90.0}, {"beta", 20.0, 80.0}, {"gamma", 30.0, 85.0}};
  MetricsLeg mean = rep.mean_row();
  CHECK(mean.hter_percent == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(mean.auc_percent == doctest::Approx(85.0).epsilon(1e-12));

  std::filesystem::path p = std::filesystem::temp_directory_path() / "defas_eval_report.csv";
  rep.write_csv(p);
  auto rows = read_csv(p);
  REQUIRE(rows.size() == 5);  // header + 3 legs + mean
  CHECK(rows[0][0] == "held_out");
  CHECK(rows[4][0] == "mean");
  std::filesystem::remove(p);

  std::string table = rep.text_table();
  CHECK(table.find("alpha") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
  CHECK(table.find("cafef00d") != std::string::npos);
}

}  // TEST_SUITE
