// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace defas {

/// Every knob of the pipeline. Serialized as a flat JSON object with dotted
/// keys; stage hashes cover the key prefixes that influence each artifact.
struct RunConfig {
  // Synthetic corpus.
  struct Data {
    int64_t seed = 1;
    int image_size = 32;
    int channels = 3;
    int n_domains = 4;            // leave-one-out rotates over these
    int subjects_per_domain = 8;
    int frames_per_video = 10;
    std::string attacks = "print,replay";  // mask3d reserved for unknown-attack eval
    double artifact_min = 0.3;
    double artifact_max = 0.7;
    int extra_real_domains = 6;   // wider real-only pool for generator training
    int extra_real_subjects = 10; // subjects per extra domain, one video each
  } data;

  // De-fake generator (denoising diffusion, deterministic sampler).
  struct Dfg {
    int64_t seed = 1;
    int T = 100;
    double beta_min = 0.001;
    double beta_max = 0.2;
    int channels = 16;     // conv width of the noise predictor
    int time_dim = 32;     // sinusoidal embedding size
    int id_tokens = 4;
    int id_dim = 16;
    int steps = 2500;
    int batch = 16;
    double lr = 0.001;
    double extra_frac = 1.0;  // fraction of the extra real pool used for training
  } dfg;

  // Anomalous-cue extraction.
  struct Cue {
    int64_t seed = 1;
    int t_hat = 80;
    int n_steps = 10;        // deterministic sampling steps from t_hat down to 0
    bool mask_background = true;
    bool dump_png = false;
  } cue;

  // Cue-guided classifier and domain-generalization training.
  struct Fas {
    int64_t seed = 1;
    std::string mode = "cue";  // "cue" or "baseline" (no cue guidance)
    int patch = 4;
    int d_model = 32;
    int blocks = 3;
    int heads = 4;
    int cue_tokens = 16;
    int cue_dim = 32;
    int ffn_hidden = 64;
    int steps = 300;
    int batch = 16;
    double lr = 0.01;
    double momentum = 0.9;
    int lr_decay_every = 120;
    double lr_decay = 0.5;
    double w_adv = 0.1;
    double w_trip = 1.0;
    double margin = 0.1;
    double grl_lambda = 1.0;
    double val_frac = 0.1;
    bool embed_norm = true;
    bool use_extra_real = true;
  } fas;

  struct Eval {
    int frames = 10;                       // frames sampled uniformly per video
    std::string hter_policy = "eer_test";  // or "dev_threshold"
  } eval;

  struct Theory {
    int64_t seed = 1;
    int kl_grid = 20;
    int kl_mc_samples = 100000;
    int kl_dim = 64;  // latent width for the Monte-Carlo agreement grid
    int pairs = 200;
    double slack = 0.25;
    int t_min = 10;
    int t_max = 80;
  } theory;

  // ---- serialization ----
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& flat);  // defaults + overrides
  void apply(const nlohmann::json& flat);                  // override in place

  // ---- stage hashes (hex strings) ----
  std::string corpus_key() const;  // data.*
  std::string dfg_key() const;     // + dfg.*
  std::string cue_key() const;     // + cue.*
  std::string fas_key() const;     // + fas.*, eval.*
  std::string full_key() const;    // everything
};

/// FNV-1a over bytes; used for config keys.
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

}  // namespace defas
