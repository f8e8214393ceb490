// SPDX-License-Identifier: Apache-2.0
#include "defas/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "defas/check.hpp"
#include "defas/io.hpp"

namespace defas {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Foreground ellipse in normalized coordinates.
constexpr double kFaceRy = 0.42;
constexpr double kFaceRx = 0.34;

// Fixed landmark anchors (y, x) the identity code modulates.
constexpr double kAnchors[8][2] = {
    {0.38, 0.35}, {0.38, 0.65}, {0.55, 0.50}, {0.72, 0.50},
    {0.58, 0.30}, {0.58, 0.70}, {0.22, 0.50}, {0.85, 0.50},
};

constexpr double kSkin[3] = {0.72, 0.58, 0.48};
constexpr double kBackground = 0.18;

bool inside_face(double ny, double nx) {
  const double dy = (ny - 0.5) / kFaceRy;
  const double dx = (nx - 0.5) / kFaceRx;
  return dy * dy + dx * dx <= 1.0;
}

double blob_channel_weight(int blob, int ch) {
  const double phase = kTwoPi * ch / 3.0;
  return 0.7 + 0.3 * std::cos(kTwoPi * blob / 8.0 + phase);
}

// Seed streams for the different draws inside one corpus.
enum : uint64_t {
  kStreamIdentity = 0xA0000,
  kStreamRender = 0xB000000,
  kStreamSpoof = 0xC000000,
  kStreamStrength = 0xD000000,
  kStreamExtraIdentity = 0xE0000,
  kStreamExtraDomain = 0xE1000,
  kStreamExtraRender = 0xE2000000,
};

}  // namespace

const char* attack_name(AttackType a) {
  switch (a) {
    case AttackType::none: return "none";
    case AttackType::print: return "print";
    case AttackType::replay: return "replay";
    case AttackType::mask3d: return "mask3d";
  }
  DEFAS_CHECK(false, "bad attack enum");
  return "";
}

AttackType attack_from_name(const std::string& name) {
  if (name == "none") return AttackType::none;
  if (name == "print") return AttackType::print;
  if (name == "replay") return AttackType::replay;
  if (name == "mask3d") return AttackType::mask3d;
  DEFAS_CHECK(false, "unknown attack type '", name, "'");
  return AttackType::none;
}

std::vector<AttackType> attack_list(const std::string& csv) {
  std::vector<AttackType> out;
  std::string cur;
  for (char ch : csv + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(attack_from_name(cur));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  return out;
}

IdentityVector IdentityVector::from_seed(uint64_t subject_seed, int dim) {
  DEFAS_CHECK(dim >= 1, "identity dim must be positive");
  Rng rng(subject_seed);
  IdentityVector id;
  id.values = Vec(dim);
  rng.fill_normal(id.values.data(), static_cast<size_t>(dim));
  const double n = id.values.norm();
  DEFAS_CHECK(n > 0.0, "degenerate identity draw");
  id.values /= n;
  return id;
}

std::vector<DomainConfig> default_domains(int n) {
  DEFAS_CHECK(n >= 1, "need at least one domain");
  const DomainConfig presets[4] = {
      {0, 1.00, {0.00, 0.00, 0.00}, 0.020, 0.0},
      {1, 1.25, {0.08, 0.02, -0.05}, 0.010, 0.6},
      {2, 0.80, {-0.06, 0.00, 0.08}, 0.040, 0.0},
      {3, 1.10, {0.00, -0.07, 0.03}, 0.015, 1.0},
  };
  std::vector<DomainConfig> out;
  for (int i = 0; i < n; ++i) {
    DomainConfig d = presets[i % 4];
    d.domain_id = i;
    // Cycled presets get a gain nudge so every pair still differs.
    d.illumination_gain += 0.07 * (i / 4);
    out.push_back(d);
  }
  return out;
}

SyntheticSample render_real(const IdentityVector& identity, const DomainConfig& domain,
                            uint64_t rng_seed, int image_size, int channels) {
  DEFAS_CHECK(identity.values.size() >= 1, "empty identity");
  DEFAS_CHECK(std::abs(identity.values.norm() - 1.0) < 1e-6, "identity not unit norm");
  DEFAS_CHECK(domain.illumination_gain > 0.0, "gain must be positive");
  DEFAS_CHECK(channels == 1 || channels == 3, "channels must be 1 or 3");

  const int h = image_size, w = image_size;
  Rng rng(rng_seed);
  // Rigid micro-motion plus per-blob jitter; this is what varies from frame
  // to frame of one video.
  const double my = rng.uniform(-0.02, 0.02);
  const double mx = rng.uniform(-0.02, 0.02);
  const int n_blobs = static_cast<int>(identity.values.size());
  std::vector<double> cy(n_blobs), cx(n_blobs), rad(n_blobs), amp(n_blobs);
  for (int b = 0; b < n_blobs; ++b) {
    const double v = identity.values[b];
    const auto& anchor = kAnchors[b % 8];
    cy[b] = anchor[0] + my + rng.uniform(-0.006, 0.006) + 0.02 * (b / 8);
    cx[b] = anchor[1] + mx + rng.uniform(-0.006, 0.006);
    rad[b] = 0.10 + 0.05 * std::abs(v);
    amp[b] = 0.30 * v;
  }

  SyntheticSample s;
  s.image = Image::zeros(h, w, channels);
  s.bg_mask.assign(static_cast<size_t>(h) * w, 0);
  s.domain_id = domain.domain_id;
  s.identity = identity;
  s.seed = rng_seed;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ny = (y + 0.5) / h;
      const double nx = (x + 0.5) / w;
      const bool fg = inside_face(ny, nx);
      if (!fg) s.bg_mask[static_cast<size_t>(y) * w + x] = 1;
      for (int ch = 0; ch < channels; ++ch) {
        double val = kBackground;
        if (fg) {
          val = kSkin[ch % 3];
          for (int b = 0; b < n_blobs; ++b) {
            const double dy = ny - cy[b];
            const double dx = nx - cx[b];
            const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * rad[b] * rad[b]));
            val += amp[b] * blob_channel_weight(b, ch % 3) * g;
          }
        }
        val = val * domain.illumination_gain + domain.color_bias[ch % 3];
        s.image.at(y, x, ch) = val;
      }
    }
  }

  s.image = gaussian_blur(s.image, domain.blur_radius);
  if (domain.noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < s.image.data.size(); ++i)
      s.image.data[i] += domain.noise_sigma * rng.normal();
  }
  clamp01(s.image);
  return s;
}

SyntheticSample apply_spoof(const SyntheticSample& sample, AttackType attack, double strength,
                            uint64_t rng_seed) {
  DEFAS_CHECK(sample.label == 0, "apply_spoof expects a real sample");
  DEFAS_CHECK(attack != AttackType::none, "attack type required");
  DEFAS_CHECK(strength > 0.0 && strength <= 1.0, "strength must be in (0,1], got ", strength);

  const int h = sample.image.h, w = sample.image.w, c = sample.image.c;
  Rng rng(rng_seed);
  SyntheticSample out = sample;
  out.label = 1;
  out.attack = attack;
  out.seed = rng_seed;

  // Artifact field over the image plane, channel-uniform, linear in strength.
  std::vector<double> art(static_cast<size_t>(h) * w, 0.0);
  if (attack == AttackType::print) {
    const double py = rng.uniform(0.0, kTwoPi);
    const double px = rng.uniform(0.0, kTwoPi);
    const double cycles = 8.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        art[static_cast<size_t>(y) * w + x] =
            0.22 * std::sin(kTwoPi * cycles * (y + 0.5) / h + py) *
            std::sin(kTwoPi * cycles * (x + 0.5) / w + px);
  } else if (attack == AttackType::replay) {
    const double phase = rng.uniform(0.0, kTwoPi);
    for (int y = 0; y < h; ++y) {
      const double line = 0.18 * std::sin(kTwoPi * (y + 0.5) / 3.0 + phase) + 0.10;
      for (int x = 0; x < w; ++x) art[static_cast<size_t>(y) * w + x] = line;
    }
  } else {  // mask3d: hard-edged specular patches of a rigid surface
    for (int k = 0; k < 3; ++k) {
      const double cy = rng.uniform(0.30, 0.70);
      const double cx = rng.uniform(0.35, 0.65);
      const double ry = rng.uniform(0.08, 0.16);
      const double rx = rng.uniform(0.08, 0.16);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double dy = ((y + 0.5) / h - cy) / ry;
          const double dx = ((x + 0.5) / w - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) {
            auto& a = art[static_cast<size_t>(y) * w + x];
            a = std::max(a, 0.30);
          }
        }
    }
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (sample.bg_mask[static_cast<size_t>(y) * w + x]) continue;
      const double add = strength * art[static_cast<size_t>(y) * w + x];
      for (int ch = 0; ch < c; ++ch) out.image.at(y, x, ch) += add;
    }
  clamp01(out.image);
  return out;
}

std::vector<SyntheticSample> build_corpus(const CorpusSpec& spec) {
  DEFAS_CHECK(spec.n_subjects >= 1, "need at least one subject");
  DEFAS_CHECK(!spec.domains.empty(), "need at least one domain");
  DEFAS_CHECK(spec.frames_per_video >= 1, "need at least one frame per video");
  DEFAS_CHECK(spec.strength_min > 0.0 && spec.strength_min <= spec.strength_max &&
                  spec.strength_max <= 1.0,
              "bad strength range");

  const Rng root(spec.seed);
  std::vector<IdentityVector> ids;
  for (int s = 0; s < spec.n_subjects; ++s)
    ids.push_back(IdentityVector::from_seed(root.child(kStreamIdentity + s).base_seed(),
                                            spec.id_dim));

  const int S = spec.n_subjects;
  const int A = static_cast<int>(spec.attacks.size());
  const int F = spec.frames_per_video;
  std::vector<SyntheticSample> corpus;
  for (size_t di = 0; di < spec.domains.size(); ++di) {
    const DomainConfig& dom = spec.domains[di];
    for (int s = 0; s < S; ++s) {
      const uint64_t video = static_cast<uint64_t>(di) * S + s;
      std::vector<SyntheticSample> real_frames;
      for (int f = 0; f < F; ++f) {
        SyntheticSample r = render_real(
            ids[s], dom, root.child(kStreamRender + video * 64 + f).base_seed(),
            spec.image_size, spec.channels);
        r.subject_id = s;
        r.frame = f;
        real_frames.push_back(std::move(r));
      }
      for (const auto& r : real_frames) corpus.push_back(r);
      for (int a = 0; a < A; ++a) {
        const uint64_t fake_video = video * 8 + a;
        Rng sr = root.child(kStreamStrength + fake_video);
        const double strength = sr.uniform(spec.strength_min, spec.strength_max);
        const uint64_t spoof_seed = root.child(kStreamSpoof + fake_video).base_seed();
        for (const auto& r : real_frames)
          corpus.push_back(apply_spoof(r, spec.attacks[a], strength, spoof_seed));
      }
    }
  }
  return corpus;
}

SplitPair build_loo_split(const std::vector<SyntheticSample>& corpus, int held_out_domain_id) {
  bool found = false;
  for (const auto& s : corpus)
    if (s.domain_id == held_out_domain_id) {
      found = true;
      break;
    }
  DEFAS_CHECK(found, "domain ", held_out_domain_id, " absent from corpus");
  SplitPair out;
  for (const auto& s : corpus)
    (s.domain_id == held_out_domain_id ? out.test : out.train).push_back(s);
  return out;
}

SplitPair build_unknown_attack_split(const std::vector<SyntheticSample>& corpus,
                                     double test_subject_frac) {
  DEFAS_CHECK(test_subject_frac > 0.0 && test_subject_frac < 1.0,
              "test_subject_frac must be in (0,1)");
  std::set<int> subjects;
  for (const auto& s : corpus) subjects.insert(s.subject_id);
  DEFAS_CHECK(subjects.size() >= 2, "need at least two subjects to split");
  const int n_test = std::max(
      1, static_cast<int>(std::lround(test_subject_frac * static_cast<double>(subjects.size()))));
  std::set<int> test_subjects;
  for (auto it = subjects.rbegin(); it != subjects.rend() && static_cast<int>(test_subjects.size()) < n_test;
       ++it)
    test_subjects.insert(*it);

  SplitPair out;
  for (const auto& s : corpus) {
    if (test_subjects.count(s.subject_id)) {
      out.test.push_back(s);
    } else if (s.attack != AttackType::mask3d) {
      out.train.push_back(s);
    }
  }
  return out;
}

std::vector<SyntheticSample> build_extra_real_pool(int n_subjects, int n_domains, int frames,
                                                   uint64_t seed, int image_size, int channels,
                                                   int id_dim) {
  DEFAS_CHECK(n_subjects >= 0 && n_domains >= 0 && frames >= 1, "bad extra pool shape");
  std::vector<SyntheticSample> pool;
  if (n_subjects == 0 || n_domains == 0) return pool;

  const Rng root(seed);
  for (int d = 0; d < n_domains; ++d) {
    Rng dr = root.child(kStreamExtraDomain + d);
    DomainConfig dom;
    dom.domain_id = 100 + d;
    dom.illumination_gain = dr.uniform(0.70, 1.40);
    for (int ch = 0; ch < 3; ++ch) dom.color_bias[ch] = dr.uniform(-0.15, 0.15);
    dom.noise_sigma = dr.uniform(0.0, 0.05);
    dom.blur_radius = dr.uniform(0.0, 1.2);
    for (int s = 0; s < n_subjects; ++s) {
      const uint64_t subj_stream = kStreamExtraIdentity + static_cast<uint64_t>(d) * 4096 + s;
      IdentityVector id = IdentityVector::from_seed(root.child(subj_stream).base_seed(), id_dim);
      for (int f = 0; f < frames; ++f) {
        const uint64_t video = static_cast<uint64_t>(d) * n_subjects + s;
        SyntheticSample r = render_real(
            id, dom, root.child(kStreamExtraRender + video * 64 + f).base_seed(), image_size,
            channels);
        r.subject_id = 100000 + d * 1000 + s;
        r.frame = f;
        pool.push_back(std::move(r));
      }
    }
  }
  return pool;
}

std::map<VideoKey, std::vector<int>> group_videos(const std::vector<SyntheticSample>& set) {
  std::map<VideoKey, std::vector<int>> out;
  for (size_t i = 0; i < set.size(); ++i)
    out[{set[i].domain_id, set[i].subject_id, set[i].attack}].push_back(static_cast<int>(i));
  for (auto& [key, idx] : out)
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return set[a].frame < set[b].frame; });
  return out;
}

void export_corpus(const std::filesystem::path& dir,
                   const std::vector<SyntheticSample>& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::vector<Json> rows;
  char name[32];
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    const std::string img_rel = std::string("images/") + name;
    const std::string mask_rel = std::string("masks/") + name;
    write_png(dir / img_rel, s.image);
    write_mask_png(dir / mask_rel, s.bg_mask, s.image.h, s.image.w);
    Json row{{"path", img_rel},
             {"mask", mask_rel},
             {"label", s.label},
             {"domain_id", s.domain_id},
             {"attack_type", attack_name(s.attack)},
             {"subject_id", s.subject_id},
             {"frame", s.frame},
             {"seed", s.seed}};
    row["identity"] = std::vector<double>(s.identity.values.data(),
                                          s.identity.values.data() + s.identity.values.size());
    rows.push_back(std::move(row));
  }
  write_jsonl(dir / "meta.jsonl", rows);
}

std::vector<SyntheticSample> import_corpus(const std::filesystem::path& dir) {
  const auto rows = read_jsonl(dir / "meta.jsonl");
  std::vector<SyntheticSample> corpus;
  for (const auto& row : rows) {
    SyntheticSample s;
    s.image = read_png(dir / row.at("path").get<std::string>());
    int mh = 0, mw = 0;
    s.bg_mask = read_mask_png(dir / row.at("mask").get<std::string>(), &mh, &mw);
    DEFAS_CHECK(mh == s.image.h && mw == s.image.w, "mask/image shape mismatch in corpus");
    s.label = row.at("label").get<int>();
    s.domain_id = row.at("domain_id").get<int>();
    s.attack = attack_from_name(row.at("attack_type").get<std::string>());
    s.subject_id = row.at("subject_id").get<int>();
    s.frame = row.at("frame").get<int>();
    s.seed = row.at("seed").get<uint64_t>();
    const auto idv = row.at("identity").get<std::vector<double>>();
    s.identity.values = Eigen::Map<const Vec>(idv.data(), static_cast<Eigen::Index>(idv.size()));
    corpus.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace defas
