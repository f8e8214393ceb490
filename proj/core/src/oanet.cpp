// SPDX-License-Identifier: Apache-2.0
#include "defas/oanet.hpp"

#include <cmath>
#include <string>

#include "defas/check.hpp"

namespace defas {

double classify(const Eigen::Vector2d& logits) {
  const double m = logits.maxCoeff();
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  return e1 / (e0 + e1);
}

Mat extract_patches(const Image& im, int patch) {
  DEFAS_CHECK(patch >= 1 && im.h % patch == 0 && im.w % patch == 0,
              "image ", im.h, "x", im.w, " not divisible by patch ", patch);
  const int gy = im.h / patch, gx = im.w / patch;
  const int len = patch * patch * im.c;
  Mat out(static_cast<Eigen::Index>(gy) * gx, len);
  for (int py = 0; py < gy; ++py)
    for (int px = 0; px < gx; ++px) {
      Eigen::Index row = static_cast<Eigen::Index>(py) * gx + px;
      int col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < im.c; ++c)
            out(row, col++) = im.at(py * patch + y, px * patch + x, c);
    }
  return out;
}

namespace {

// Residual image as an (H*W) x C matrix without rescaling.
Mat residual_matrix(const Image& im) {
  Mat m(static_cast<Eigen::Index>(im.h) * im.w, im.c);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int c = 0; c < im.c; ++c) m(static_cast<Eigen::Index>(y) * im.w + x, c) = im.at(y, x, c);
  return m;
}

int int_sqrt(int n) {
  int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return r;
}

}  // namespace

OaNet::OaNet(const OaSpec& spec, uint64_t seed) : spec_(spec) {
  DEFAS_CHECK(spec.image_size % spec.patch == 0, "image size ", spec.image_size,
              " not divisible by patch ", spec.patch);
  const int grid = int_sqrt(spec.cue_tokens);
  DEFAS_CHECK(grid * grid == spec.cue_tokens, "cue_tokens ", spec.cue_tokens,
              " is not a perfect square");
  DEFAS_CHECK(spec.image_size % grid == 0, "cue token grid ", grid, " does not divide ",
              spec.image_size);
  int ratio = spec.image_size / grid;
  DEFAS_CHECK(ratio >= 2 && (ratio & (ratio - 1)) == 0, "image/grid ratio ", ratio,
              " must be a power of two >= 2");

  Rng rng(seed);
  patch_proj_ = Linear(params_, rng, "patch.proj", spec.patch * spec.patch * spec.channels,
                       spec.d_model);
  Mat pos(spec.n_patches(), spec.d_model);
  rng.fill_normal(pos.data(), static_cast<size_t>(pos.size()));
  params_.add("patch.pos", 0.02 * pos);

  // cue encoder: stem plus one stride-2 stage per halving
  int halvings = 0;
  for (int r = ratio; r > 1; r /= 2) ++halvings;
  int cin = spec.channels;
  int cout = std::min(spec.cue_dim, 8);
  cue_convs_.emplace_back(params_, rng, "cue.conv0", cin, cout, 3, 1, 1);
  for (int j = 1; j <= halvings; ++j) {
    cin = cout;
    cout = (j == halvings) ? spec.cue_dim : std::min(spec.cue_dim, 8 << j);
    cue_convs_.emplace_back(params_, rng, "cue.conv" + std::to_string(j), cin, cout, 3, 2, 1);
  }
  Mat cue_pos(spec.cue_tokens, spec.cue_dim);
  rng.fill_normal(cue_pos.data(), static_cast<size_t>(cue_pos.size()));
  params_.add("cue.pos", 0.02 * cue_pos);

  for (int b = 0; b < spec.blocks; ++b) {
    const std::string p = "blk" + std::to_string(b);
    Block blk;
    blk.ln1 = LayerNorm(params_, p + ".ln1", spec.d_model);
    blk.self_attn = MultiHeadAttention(params_, rng, p + ".self", spec.d_model, spec.heads);
    blk.ln2 = LayerNorm(params_, p + ".ln2", spec.d_model);
    blk.cross_attn = MultiHeadAttention(params_, rng, p + ".cross", spec.d_model,
                                        spec.cross_heads, /*zero_out=*/true, spec.cue_dim);
    blk.ln3 = LayerNorm(params_, p + ".ln3", spec.d_model);
    blk.ffn = Ffn(params_, rng, p + ".ffn", spec.d_model, spec.ffn_hidden);
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = LayerNorm(params_, "final_ln", spec.d_model);
  head_ = Linear(params_, rng, "head", spec.d_model, 2);
}

Var OaNet::patch_tokens_on(Bound& bd, const Image& image) const {
  DEFAS_CHECK(image.h == spec_.image_size && image.w == spec_.image_size &&
                  image.c == spec_.channels,
              "image shape mismatch");
  Tape& t = bd.tape();
  Var patches = t.input(extract_patches(image, spec_.patch));
  return t.add(patch_proj_.forward(bd, patches), bd("patch.pos"));
}

Var OaNet::cue_tokens_on(Bound& bd, const Image& cue_residual) const {
  DEFAS_CHECK(cue_residual.h == spec_.image_size && cue_residual.w == spec_.image_size &&
                  cue_residual.c == spec_.channels,
              "cue shape mismatch");
  Tape& t = bd.tape();
  Var v = t.input(residual_matrix(cue_residual));
  int h = spec_.image_size, w = spec_.image_size;
  for (size_t i = 0; i < cue_convs_.size(); ++i) {
    const ConvGeom g = cue_convs_[i].geom(h, w);
    v = cue_convs_[i].forward(bd, v, h, w);
    if (i + 1 < cue_convs_.size()) v = t.gelu(v);
    h = g.ho();
    w = g.wo();
  }
  DEFAS_CHECK(h * w == spec_.cue_tokens, "cue encoder landed on ", h * w, " tokens, expected ",
              spec_.cue_tokens);
  return t.add(v, bd("cue.pos"));
}

Var OaNet::feature_on(Bound& bd, const Image& image, const Image& cue_residual) const {
  Tape& t = bd.tape();
  Var tok = patch_tokens_on(bd, image);
  Var cue_tok = cue_tokens_on(bd, cue_residual);
  for (const Block& blk : blocks_) {
    Var n1 = blk.ln1.forward(bd, tok);
    tok = t.add(tok, blk.self_attn.forward(bd, n1, n1));
    tok = t.add(tok, blk.cross_attn.forward(bd, blk.ln2.forward(bd, tok), cue_tok));
    tok = t.add(tok, blk.ffn.forward(bd, blk.ln3.forward(bd, tok)));
  }
  return t.mean_rows(final_ln_.forward(bd, tok));
}

Var OaNet::logits_on(Bound& bd, Var feature) const { return head_.forward(bd, feature); }

FASFeature OaNet::forward(const Image& image, const Image& cue_residual) const {
  Tape tape;
  Bound bd(tape, params_);
  Var feat = feature_on(bd, image, cue_residual);
  Var logits = logits_on(bd, feat);
  FASFeature out;
  out.feature = tape.val(feat).row(0).transpose();
  out.logits = Eigen::Vector2d(tape.val(logits)(0, 0), tape.val(logits)(0, 1));
  return out;
}

std::vector<FASFeature> OaNet::forward_batch(const std::vector<const Image*>& images,
                                             const std::vector<const Image*>& cues) const {
  DEFAS_CHECK(images.size() == cues.size(), "batch length mismatch");
  std::vector<FASFeature> out;
  out.reserve(images.size());
  for (size_t i = 0; i < images.size(); ++i) out.push_back(forward(*images[i], *cues[i]));
  return out;
}

}  // namespace defas
