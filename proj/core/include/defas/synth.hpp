// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "defas/image.hpp"
#include "defas/rng.hpp"

namespace defas {

enum class AttackType { none, print, replay, mask3d };

const char* attack_name(AttackType a);
AttackType attack_from_name(const std::string& name);
/// Parses a comma-separated list like "print,replay".
std::vector<AttackType> attack_list(const std::string& csv);

/// Generative per-subject appearance code, unit norm.
struct IdentityVector {
  Vec values;

  static IdentityVector from_seed(uint64_t subject_seed, int dim = 8);
};

/// Capture conditions that differ between data sources.
struct DomainConfig {
  int domain_id = 0;
  double illumination_gain = 1.0;
  Eigen::Vector3d color_bias = Eigen::Vector3d::Zero();
  double noise_sigma = 0.0;
  double blur_radius = 0.0;
};

/// n fixed presets; any two differ in at least one field.
std::vector<DomainConfig> default_domains(int n);

struct SyntheticSample {
  Image image;
  int label = 0;  // 1 = fake, 0 = real
  int domain_id = 0;
  AttackType attack = AttackType::none;
  IdentityVector identity;
  PixelMask bg_mask;  // 1 = background
  int subject_id = 0;
  int frame = 0;
  uint64_t seed = 0;
};

/// Renders a face-like pattern: identity-weighted radial blobs inside an
/// elliptical foreground, then domain transforms in a fixed order
/// (gain, color bias, blur, sensor noise, clamp). Deterministic in all
/// arguments; rng_seed drives micro-motion and noise, so frames of one
/// video are renders with consecutive seeds.
SyntheticSample render_real(const IdentityVector& identity, const DomainConfig& domain,
                            uint64_t rng_seed, int image_size = 32, int channels = 3);

/// Adds a presentation-attack texture inside the foreground only. The
/// artifact is linear in strength; background pixels are untouched and the
/// identity field is preserved. Rejects samples that are already fake.
SyntheticSample apply_spoof(const SyntheticSample& sample, AttackType attack, double strength,
                            uint64_t rng_seed);

struct CorpusSpec {
  int n_subjects = 8;
  std::vector<DomainConfig> domains;
  std::vector<AttackType> attacks = {AttackType::print, AttackType::replay};
  int frames_per_video = 1;
  int image_size = 32;
  int channels = 3;
  int id_dim = 8;
  double strength_min = 0.3;
  double strength_max = 0.7;
  uint64_t seed = 1;
};

/// For every (domain, subject): one real video plus one fake video per attack
/// type. Fake frames are spoofed copies of the corresponding real frames, so
/// every fake has a same-identity real counterpart with a known artifact.
/// Order is deterministic: domains outer, subjects next, then the real video
/// followed by one video per attack, frames innermost.
std::vector<SyntheticSample> build_corpus(const CorpusSpec& spec);

struct SplitPair {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> test;
};

/// Held-out domain becomes the test set, everything else trains.
SplitPair build_loo_split(const std::vector<SyntheticSample>& corpus, int held_out_domain_id);

/// Subject-disjoint split for the unseen-attack protocol: training keeps only
/// non-mask3d samples of the training subjects; the test side keeps all
/// samples of the remaining subjects (reals, seen attacks, and mask3d).
SplitPair build_unknown_attack_split(const std::vector<SyntheticSample>& corpus,
                                     double test_subject_frac = 0.25);

/// Real-only pool over fresh identities and randomized capture conditions,
/// drawn from a wider range than the fixed presets. Subject seeds are
/// disjoint from corpus subjects by construction.
std::vector<SyntheticSample> build_extra_real_pool(int n_subjects, int n_domains, int frames,
                                                   uint64_t seed, int image_size = 32,
                                                   int channels = 3, int id_dim = 8);

/// Groups samples into videos keyed by (domain, subject, attack); each value
/// lists sample indices ordered by frame.
using VideoKey = std::tuple<int, int, AttackType>;
std::map<VideoKey, std::vector<int>> group_videos(const std::vector<SyntheticSample>& set);

/// Writes images as 8-bit PNG, masks as 1-bit PNG, and one JSON-lines
/// metadata file. import_corpus rebuilds the sample list from that layout;
/// images come back 8-bit quantized.
void export_corpus(const std::filesystem::path& dir,
                   const std::vector<SyntheticSample>& corpus);
std::vector<SyntheticSample> import_corpus(const std::filesystem::path& dir);

}  // namespace defas
