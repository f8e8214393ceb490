// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "defas/config.hpp"
#include "defas/diffusion.hpp"
#include "defas/synth.hpp"

namespace defas {

/// Signed residual between an input image and its regenerated "real"
/// version, in image units. Latent units are twice image units per element,
/// so latent energies are 4x the values cue_energy reports.
struct AnomalousCue {
  Image residual;
  int source_index = -1;
  int t_hat_used = 0;
  uint64_t seed = 0;
};

/// Noise the input to t_hat with a seeded draw, run the deterministic
/// reverse chain conditioned on the input's own identity tokens, and return
/// input minus reconstruction.
AnomalousCue compute_cue(const SyntheticSample& sample, const EpsPredictor& pred,
                         const NoiseSchedule& ns, const IdentityEncoder& id_enc, int t_hat,
                         int n_steps, uint64_t rng_seed);

/// Zeroes the residual wherever the mask marks background.
AnomalousCue mask_background(const AnomalousCue& cue, const PixelMask& bg_mask);

/// Mean squared residual per element (image units).
double cue_energy(const AnomalousCue& cue);

struct CueStore {
  std::vector<AnomalousCue> cues;  // aligned with corpus order
};

/// One cue per sample, in memory only. Seeds derive from cfg.seed exactly as
/// in the persistent cache and values carry the same float32 precision, so
/// the result is bitwise interchangeable with a cache built from cfg.
CueStore compute_cues(const std::vector<SyntheticSample>& corpus, const EpsPredictor& pred,
                      const NoiseSchedule& ns, const IdentityEncoder& id_enc,
                      const RunConfig::Cue& cfg);

/// One cue per sample, persisted as float32 tensors plus a JSON index that
/// records the config hash. Re-running with the same hash and a complete
/// store loads instead of recomputing; a hash mismatch is refused so stale
/// caches cannot be silently mixed. In-memory values equal the stored
/// float32 precision in both paths.
CueStore cache_cues(const std::vector<SyntheticSample>& corpus, const EpsPredictor& pred,
                    const NoiseSchedule& ns, const IdentityEncoder& id_enc,
                    const RunConfig::Cue& cfg, const std::string& config_hash,
                    const std::filesystem::path& dir);

/// Loads a complete cache written by cache_cues without needing a predictor.
/// Throws if the index is missing, was built under a different config hash,
/// or any tensor file is absent.
CueStore load_cached_cues(const std::vector<SyntheticSample>& corpus, const RunConfig::Cue& cfg,
                          const std::string& config_hash, const std::filesystem::path& dir);

/// Min-max normalized grayscale view of a residual for visual inspection.
Image cue_preview(const AnomalousCue& cue);

}  // namespace defas
