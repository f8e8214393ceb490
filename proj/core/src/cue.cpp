// SPDX-License-Identifier: Apache-2.0
#include "defas/cue.hpp"

#include <cstdio>

#include "defas/check.hpp"
#include "defas/io.hpp"

namespace defas {

AnomalousCue compute_cue(const SyntheticSample& sample, const EpsPredictor& pred,
                         const NoiseSchedule& ns, const IdentityEncoder& id_enc, int t_hat,
                         int n_steps, uint64_t rng_seed) {
  DEFAS_CHECK(t_hat >= 1 && t_hat <= ns.T, "t_hat=", t_hat, " outside [1,", ns.T, "]");
  const Mat z0 = image_to_latent(sample.image);
  const Mat id_tokens = id_enc.encode(sample.image);

  Rng rng(rng_seed);
  Mat eps(z0.rows(), z0.cols());
  rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));

  const Mat z_that = forward_sample(ns, z0, t_hat, eps);
  const Mat z0_prime = generate(ns, pred, z_that, t_hat, n_steps, id_tokens);
  const Image x0_prime = latent_to_image(z0_prime, sample.image.h, sample.image.w);

  AnomalousCue cue;
  cue.residual = Image::zeros(sample.image.h, sample.image.w, sample.image.c);
  cue.residual.data = sample.image.data - x0_prime.data;
  cue.t_hat_used = t_hat;
  cue.seed = rng_seed;
  DEFAS_CHECK(cue.residual.data.allFinite(), "non-finite cue residual");
  return cue;
}

AnomalousCue mask_background(const AnomalousCue& cue, const PixelMask& bg_mask) {
  const int h = cue.residual.h, w = cue.residual.w, c = cue.residual.c;
  DEFAS_CHECK(bg_mask.size() == static_cast<size_t>(h) * w, "mask shape mismatch");
  AnomalousCue out = cue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (bg_mask[static_cast<size_t>(y) * w + x])
        for (int ch = 0; ch < c; ++ch) out.residual.at(y, x, ch) = 0.0;
  return out;
}

double cue_energy(const AnomalousCue& cue) {
  return cue.residual.data.squaredNorm() / static_cast<double>(cue.residual.data.size());
}

namespace {

void quantize_f32(Image& im) {
  for (Eigen::Index i = 0; i < im.data.size(); ++i)
    im.data[i] = static_cast<double>(static_cast<float>(im.data[i]));
}

std::string cue_file_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.f32", i);
  return buf;
}

}  // namespace

CueStore compute_cues(const std::vector<SyntheticSample>& corpus, const EpsPredictor& pred,
                      const NoiseSchedule& ns, const IdentityEncoder& id_enc,
                      const RunConfig::Cue& cfg) {
  DEFAS_CHECK(!corpus.empty(), "empty corpus");
  const Rng root(static_cast<uint64_t>(cfg.seed));
  CueStore store;
  for (size_t i = 0; i < corpus.size(); ++i) {
    AnomalousCue cue = compute_cue(corpus[i], pred, ns, id_enc, cfg.t_hat, cfg.n_steps,
                                   root.child(i).base_seed());
    if (cfg.mask_background) cue = mask_background(cue, corpus[i].bg_mask);
    quantize_f32(cue.residual);
    cue.source_index = static_cast<int>(i);
    store.cues.push_back(std::move(cue));
  }
  return store;
}

CueStore cache_cues(const std::vector<SyntheticSample>& corpus, const EpsPredictor& pred,
                    const NoiseSchedule& ns, const IdentityEncoder& id_enc,
                    const RunConfig::Cue& cfg, const std::string& config_hash,
                    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  DEFAS_CHECK(!corpus.empty(), "empty corpus");
  fs::create_directories(dir);
  const fs::path index_path = dir / "index.json";

  Json index;
  bool have_index = fs::exists(index_path);
  if (have_index) {
    index = read_json(index_path);
    DEFAS_CHECK(index.at("config_hash").get<std::string>() == config_hash,
                "cue cache at ", dir.string(),
                " was built with a different config; delete it to rebuild");
    DEFAS_CHECK(index.at("entries").size() == corpus.size(),
                "cue cache entry count does not match the corpus");
  } else {
    index = Json{{"config_hash", config_hash},
                 {"t_hat", cfg.t_hat},
                 {"n_steps", cfg.n_steps},
                 {"mask_background", cfg.mask_background},
                 {"entries", Json::array()}};
    const Rng root(static_cast<uint64_t>(cfg.seed));
    for (size_t i = 0; i < corpus.size(); ++i) {
      index["entries"].push_back(Json{{"file", cue_file_name(i)},
                                      {"source_id", i},
                                      {"seed", root.child(i).base_seed()}});
    }
  }

  CueStore store;
  bool wrote = false;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& entry = index["entries"][i];
    const fs::path f = dir / entry.at("file").get<std::string>();
    const auto& s = corpus[i];
    AnomalousCue cue;
    if (fs::exists(f)) {
      cue.residual = Image::zeros(s.image.h, s.image.w, s.image.c);
      const Vec v = read_f32_vec(f, s.image.data.size());
      cue.residual.data = v;
      cue.t_hat_used = cfg.t_hat;
      cue.seed = entry.at("seed").get<uint64_t>();
    } else {
      cue = compute_cue(s, pred, ns, id_enc, cfg.t_hat, cfg.n_steps,
                        entry.at("seed").get<uint64_t>());
      if (cfg.mask_background) cue = mask_background(cue, s.bg_mask);
      quantize_f32(cue.residual);
      write_f32_vec(f, cue.residual.data);
      if (cfg.dump_png) {
        fs::create_directories(dir / "png");
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.png", i);
        write_png(dir / "png" / name, cue_preview(cue));
      }
      wrote = true;
    }
    cue.source_index = static_cast<int>(i);
    store.cues.push_back(std::move(cue));
  }
  if (wrote || !have_index) write_json(index_path, index);
  return store;
}

CueStore load_cached_cues(const std::vector<SyntheticSample>& corpus, const RunConfig::Cue& cfg,
                          const std::string& config_hash, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path index_path = dir / "index.json";
  DEFAS_CHECK(fs::exists(index_path), "no cue cache at ", dir.string());
  const Json index = read_json(index_path);
  DEFAS_CHECK(index.at("config_hash").get<std::string>() == config_hash,
              "cue cache at ", dir.string(),
              " was built with a different config; delete it to rebuild");
  DEFAS_CHECK(index.at("entries").size() == corpus.size(),
              "cue cache entry count does not match the corpus");

  CueStore store;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& entry = index.at("entries")[i];
    const fs::path f = dir / entry.at("file").get<std::string>();
    DEFAS_CHECK(fs::exists(f), "cue cache at ", dir.string(), " is incomplete: missing ",
                f.filename().string());
    const auto& s = corpus[i];
    AnomalousCue cue;
    cue.residual = Image::zeros(s.image.h, s.image.w, s.image.c);
    cue.residual.data = read_f32_vec(f, s.image.data.size());
    cue.t_hat_used = cfg.t_hat;
    cue.seed = entry.at("seed").get<uint64_t>();
    cue.source_index = static_cast<int>(i);
    store.cues.push_back(std::move(cue));
  }
  return store;
}

Image cue_preview(const AnomalousCue& cue) {
  const Image& r = cue.residual;
  Image out = Image::zeros(r.h, r.w, 1);
  double lo = r.data.minCoeff(), hi = r.data.maxCoeff();
  const double span = (hi > lo) ? hi - lo : 1.0;
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) {
      double m = 0.0;
      for (int c = 0; c < r.c; ++c) m += r.at(y, x, c);
      out.at(y, x, 0) = (m / r.c - lo) / span;
    }
  clamp01(out);
  return out;
}

}  // namespace defas
