// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <filesystem>
#include <map>
#include <set>

#include <doctest.h>

#include "defas/synth.hpp"
#include "test_util.hpp"

using namespace defas;

namespace {

bool same_image(const Image& a, const Image& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data.data(), b.data.data(), sizeof(double) * a.data.size()) == 0;
}

double max_bg_diff(const Image& a, const Image& b, const PixelMask& bg) {
  double m = 0.0;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      if (!bg[static_cast<size_t>(y) * a.w + x]) continue;
      for (int c = 0; c < a.c; ++c)
        m = std::max(m, std::abs(a.at(y, x, c) - b.at(y, x, c)));
    }
  return m;
}

double mean_fg_diff(const Image& a, const Image& b, const PixelMask& bg) {
  double sum = 0.0;
  int n = 0;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      if (bg[static_cast<size_t>(y) * a.w + x]) continue;
      for (int c = 0; c < a.c; ++c) {
        sum += std::abs(a.at(y, x, c) - b.at(y, x, c));
        ++n;
      }
    }
  return sum / n;
}

DomainConfig plain_domain(int id, double gain) {
  DomainConfig d;
  d.domain_id = id;
  d.illumination_gain = gain;
  return d;  // no bias, no noise, no blur
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("identity vectors are unit norm and seed-deterministic") {
  auto a = IdentityVector::from_seed(42);
  auto b = IdentityVector::from_seed(42);
  auto c = IdentityVector::from_seed(43);
  CHECK(a.values.size() == 8);
  CHECK(a.values.norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  CHECK(IdentityVector::from_seed(7, 16).values.size() == 16);
  CHECK_THROWS(IdentityVector::from_seed(1, 0));
}

TEST_CASE("default domains are pairwise distinct") {
  auto doms = default_domains(6);
  REQUIRE(doms.size() == 6);
  for (size_t i = 0; i < doms.size(); ++i) {
    CHECK(doms[i].domain_id == static_cast<int>(i));
    CHECK(doms[i].illumination_gain > 0.0);
    for (size_t j = i + 1; j < doms.size(); ++j) {
      const bool differ = doms[i].illumination_gain != doms[j].illumination_gain ||
                          doms[i].color_bias != doms[j].color_bias ||
                          doms[i].noise_sigma != doms[j].noise_sigma ||
                          doms[i].blur_radius != doms[j].blur_radius;
      CHECK(differ);
    }
  }
}

TEST_CASE("render_real is deterministic and in range") {
  auto id = IdentityVector::from_seed(5);
  auto doms = default_domains(4);
  auto a = render_real(id, doms[1], 99);
  auto b = render_real(id, doms[1], 99);
  auto c = render_real(id, doms[1], 100);
  CHECK(same_image(a.image, b.image));
  CHECK(!same_image(a.image, c.image));  // frame-to-frame variation
  CHECK(a.label == 0);
  CHECK(a.attack == AttackType::none);
  CHECK(a.domain_id == 1);
  CHECK(a.image.h == 32);
  CHECK(a.image.c == 3);

  // foreground is the ellipse interior, background nonempty
  size_t bg = 0;
  for (auto v : a.bg_mask) bg += v;
  CHECK(bg > 0);
  CHECK(bg < a.bg_mask.size());
}

TEST_CASE("mean brightness scales with illumination gain") {
  auto id = IdentityVector::from_seed(11);
  auto lo = render_real(id, plain_domain(0, 0.7), 4);
  auto hi = render_real(id, plain_domain(1, 1.0), 4);
  // identical seeds, gain-only difference, no clamping at these gains
  CHECK(image_mean(hi.image) / image_mean(lo.image) == doctest::Approx(1.0 / 0.7).epsilon(1e-12));
}

TEST_CASE("a large batch of renders stays inside [0,1]") {
  auto doms = default_domains(4);
  int checked = 0;
  for (int s = 0; s < 25; ++s) {
    auto id = IdentityVector::from_seed(1000 + s);
    for (const auto& d : doms) {
      for (int f = 0; f < 10; ++f) {
        auto im = render_real(id, d, static_cast<uint64_t>(s * 97 + f)).image;
        CHECK(im.data.minCoeff() >= 0.0);
        CHECK(im.data.maxCoeff() <= 1.0);
        ++checked;
      }
    }
  }
  CHECK(checked == 1000);
}

TEST_CASE("apply_spoof is linear in strength and deterministic") {
  auto id = IdentityVector::from_seed(3);
  auto real = render_real(id, plain_domain(0, 0.8), 7);
  for (auto attack : {AttackType::print, AttackType::replay, AttackType::mask3d}) {
    CAPTURE(attack_name(attack));
    auto f1 = apply_spoof(real, attack, 0.01, 55);
    auto f1b = apply_spoof(real, attack, 0.01, 55);
    auto f2 = apply_spoof(real, attack, 0.02, 55);
    CHECK(same_image(f1.image, f1b.image));
    CHECK(f1.label == 1);
    CHECK(f1.attack == attack);
    CHECK(f1.identity.values == real.identity.values);
    // doubling strength doubles the residual (no clamping at these values)
    Vec d1 = f1.image.data - real.image.data;
    Vec d2 = f2.image.data - real.image.data;
    CHECK((d2 - 2.0 * d1).lpNorm<Eigen::Infinity>() < 1e-12);
    // vanishing strength leaves the image unchanged in the limit
    auto tiny = apply_spoof(real, attack, 1e-9, 55);
    CHECK((tiny.image.data - real.image.data).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("spoof artifacts touch only the foreground") {
  auto id = IdentityVector::from_seed(21);
  auto doms = default_domains(4);
  auto real = render_real(id, doms[2], 31);
  for (auto attack : {AttackType::print, AttackType::replay, AttackType::mask3d}) {
    CAPTURE(attack_name(attack));
    auto fake = apply_spoof(real, attack, 0.5, 77);
    CHECK(max_bg_diff(fake.image, real.image, real.bg_mask) == 0.0);
    CHECK(mean_fg_diff(fake.image, real.image, real.bg_mask) > 0.0);
  }
}

TEST_CASE("apply_spoof rejects bad inputs") {
  auto real = render_real(IdentityVector::from_seed(1), plain_domain(0, 1.0), 2);
  auto fake = apply_spoof(real, AttackType::print, 0.5, 3);
  CHECK_THROWS(apply_spoof(fake, AttackType::replay, 0.5, 4));
  CHECK_THROWS(apply_spoof(real, AttackType::none, 0.5, 4));
  CHECK_THROWS(apply_spoof(real, AttackType::print, 0.0, 4));
  CHECK_THROWS(apply_spoof(real, AttackType::print, 1.5, 4));
}

TEST_CASE("build_corpus counts, labels, and pairing") {
  CorpusSpec spec;
  spec.n_subjects = 4;
  spec.domains = default_domains(4);
  spec.attacks = {AttackType::print, AttackType::replay};
  spec.frames_per_video = 1;
  spec.seed = 9;
  auto corpus = build_corpus(spec);
  REQUIRE(corpus.size() == 4 * 4 * 3);

  int reals = 0, fakes = 0;
  for (const auto& s : corpus) (s.label ? fakes : reals)++;
  CHECK(reals == 16);
  CHECK(fakes == 32);  // 1 : attacks_per_real

  // every fake has a same-identity real of the same subject/domain whose
  // background it shares pixel for pixel
  std::map<std::pair<int, int>, const SyntheticSample*> real_of;
  for (const auto& s : corpus)
    if (s.label == 0) real_of[{s.domain_id, s.subject_id}] = &s;
  for (const auto& s : corpus) {
    if (s.label == 0) continue;
    auto it = real_of.find({s.domain_id, s.subject_id});
    REQUIRE(it != real_of.end());
    CHECK(s.identity.values == it->second->identity.values);
    CHECK(max_bg_diff(s.image, it->second->image, s.bg_mask) == 0.0);
    CHECK(s.attack != AttackType::none);
  }

  // deterministic order and content
  auto again = build_corpus(spec);
  REQUIRE(again.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(same_image(corpus[i].image, again[i].image));
    CHECK(corpus[i].subject_id == again[i].subject_id);
    CHECK(corpus[i].attack == again[i].attack);
  }
}

TEST_CASE("videos carry multiple distinct frames") {
  CorpusSpec spec;
  spec.n_subjects = 2;
  spec.domains = default_domains(2);
  spec.attacks = {AttackType::print};
  spec.frames_per_video = 3;
  spec.seed = 5;
  auto corpus = build_corpus(spec);
  REQUIRE(corpus.size() == 2 * 2 * 2 * 3);

  auto videos = group_videos(corpus);
  CHECK(videos.size() == 2 * 2 * 2);
  for (const auto& [key, idx] : videos) {
    REQUIRE(idx.size() == 3);
    for (int f = 0; f < 3; ++f) CHECK(corpus[idx[f]].frame == f);
    CHECK(!same_image(corpus[idx[0]].image, corpus[idx[1]].image));
  }
}

TEST_CASE("leave-one-out split partitions by domain") {
  CorpusSpec spec;
  spec.n_subjects = 3;
  spec.domains = default_domains(4);
  spec.seed = 2;
  auto corpus = build_corpus(spec);
  auto split = build_loo_split(corpus, 3);
  CHECK(split.train.size() + split.test.size() == corpus.size());
  std::set<int> train_doms, test_doms;
  for (const auto& s : split.train) train_doms.insert(s.domain_id);
  for (const auto& s : split.test) test_doms.insert(s.domain_id);
  CHECK(train_doms == std::set<int>{0, 1, 2});
  CHECK(test_doms == std::set<int>{3});
  CHECK_THROWS(build_loo_split(corpus, 17));
}

TEST_CASE("unknown-attack split is subject-disjoint and leakage-free") {
  CorpusSpec spec;
  spec.n_subjects = 4;
  spec.domains = default_domains(2);
  spec.attacks = {AttackType::print, AttackType::replay, AttackType::mask3d};
  spec.seed = 13;
  auto corpus = build_corpus(spec);
  auto split = build_unknown_attack_split(corpus, 0.25);

  std::set<int> train_subj, test_subj;
  bool train_has_mask3d = false, test_has_mask3d = false, test_has_real = false;
  for (const auto& s : split.train) {
    train_subj.insert(s.subject_id);
    train_has_mask3d |= (s.attack == AttackType::mask3d);
  }
  for (const auto& s : split.test) {
    test_subj.insert(s.subject_id);
    test_has_mask3d |= (s.attack == AttackType::mask3d);
    test_has_real |= (s.label == 0);
  }
  CHECK(!train_has_mask3d);
  CHECK(test_has_mask3d);
  CHECK(test_has_real);
  for (int s : test_subj) CHECK(train_subj.count(s) == 0);
  CHECK(train_subj.size() + test_subj.size() == 4);
}

TEST_CASE("extra real pool is real-only with fresh identities") {
  CorpusSpec spec;
  spec.n_subjects = 4;
  spec.domains = default_domains(2);
  spec.seed = 21;
  auto corpus = build_corpus(spec);

  auto pool = build_extra_real_pool(3, 2, 2, spec.seed);
  REQUIRE(pool.size() == 3 * 2 * 2);
  for (const auto& s : pool) {
    CHECK(s.label == 0);
    CHECK(s.attack == AttackType::none);
    CHECK(s.domain_id >= 100);
    CHECK(s.image.data.minCoeff() >= 0.0);
    CHECK(s.image.data.maxCoeff() <= 1.0);
  }
  // identities differ from every corpus subject
  for (const auto& p : pool)
    for (const auto& c : corpus)
      if (c.label == 0 && c.frame == 0)
        CHECK(std::abs(p.identity.values.dot(c.identity.values)) < 1.0 - 1e-6);

  CHECK(build_extra_real_pool(0, 2, 1, 1).empty());
}

TEST_CASE("domains are separable from channel statistics") {
  CorpusSpec spec;
  spec.n_subjects = 6;
  spec.domains = default_domains(4);
  spec.attacks = {};
  spec.frames_per_video = 4;
  spec.seed = 33;
  auto corpus = build_corpus(spec);

  // nearest-centroid probe on per-channel means
  std::map<int, Eigen::Vector3d> centroid;
  std::map<int, int> count;
  for (const auto& s : corpus) {
    Eigen::Vector3d f = channel_means(s.image);
    auto [it, fresh] = centroid.try_emplace(s.domain_id, Eigen::Vector3d::Zero());
    it->second += f;
    count[s.domain_id]++;
  }
  for (auto& [d, c] : centroid) c /= count[d];
  int correct = 0;
  for (const auto& s : corpus) {
    Eigen::Vector3d f = channel_means(s.image);
    int best = -1;
    double best_d = 1e300;
    for (const auto& [d, c] : centroid) {
      const double dist = (f - c).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = d;
      }
    }
    correct += (best == s.domain_id);
  }
  CHECK(static_cast<double>(correct) / corpus.size() > 0.9);
}

TEST_CASE("corpus export/import round trip") {
  namespace fs = std::filesystem;
  CorpusSpec spec;
  spec.n_subjects = 2;
  spec.domains = default_domains(2);
  spec.attacks = {AttackType::print};
  spec.frames_per_video = 2;
  spec.seed = 77;
  auto corpus = build_corpus(spec);

  const fs::path dir = fs::temp_directory_path() / "defas_synth_export_test";
  fs::remove_all(dir);
  export_corpus(dir, corpus);
  auto back = import_corpus(dir);
  REQUIRE(back.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].label == corpus[i].label);
    CHECK(back[i].domain_id == corpus[i].domain_id);
    CHECK(back[i].attack == corpus[i].attack);
    CHECK(back[i].subject_id == corpus[i].subject_id);
    CHECK(back[i].frame == corpus[i].frame);
    CHECK(back[i].seed == corpus[i].seed);
    CHECK(back[i].identity.values == corpus[i].identity.values);
    CHECK(back[i].bg_mask == corpus[i].bg_mask);
    // 8-bit quantization error only
    CHECK((back[i].image.data - corpus[i].image.data).lpNorm<Eigen::Infinity>() <=
          0.5 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST_CASE("attack list parsing") {
  auto l = attack_list("print,replay");
  REQUIRE(l.size() == 2);
  CHECK(l[0] == AttackType::print);
  CHECK(l[1] == AttackType::replay);
  auto spaced = attack_list(" print , mask3d ");
  REQUIRE(spaced.size() == 2);
  CHECK(spaced[1] == AttackType::mask3d);
  CHECK(attack_list("").empty());
  CHECK_THROWS(attack_list("print,photo"));
  CHECK(std::string(attack_name(AttackType::replay)) == "replay");
  CHECK(attack_from_name("mask3d") == AttackType::mask3d);
}

TEST_SUITE_END();
