// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "defas/image.hpp"
#include "defas/nn.hpp"

namespace defas {

struct OaSpec {
  int image_size = 32;
  int channels = 3;
  int patch = 4;
  int d_model = 64;
  int blocks = 4;
  int heads = 4;
  int cross_heads = 4;  // cue cross-attention may use its own head count
  int cue_tokens = 16;  // perfect square; image_size over its root must be a power of two
  int cue_dim = 32;
  int ffn_hidden = 128;

  int grid() const { return image_size / patch; }
  int n_patches() const { return grid() * grid(); }
};

struct FASFeature {
  Vec feature;             // pooled d_model embedding
  Eigen::Vector2d logits;  // [real, fake]
};

/// Softmax probability of the fake class.
double classify(const Eigen::Vector2d& logits);

/// Flattened patch rows in grid order; each row is patch*patch*channels
/// values in image layout order.
Mat extract_patches(const Image& im, int patch);

/// Patch transformer with a cue-conditioned cross-attention branch in every
/// block. The cross-attention output projections start at exactly zero, so a
/// fresh model ignores the cue entirely; training opens the branch.
class OaNet {
 public:
  OaNet(const OaSpec& spec, uint64_t seed);

  // tape-building pieces used by the training loop
  Var patch_tokens_on(Bound& bd, const Image& image) const;
  Var cue_tokens_on(Bound& bd, const Image& cue_residual) const;
  Var feature_on(Bound& bd, const Image& image, const Image& cue_residual) const;  // 1 x d_model
  Var logits_on(Bound& bd, Var feature) const;                                     // 1 x 2

  FASFeature forward(const Image& image, const Image& cue_residual) const;
  std::vector<FASFeature> forward_batch(const std::vector<const Image*>& images,
                                        const std::vector<const Image*>& cues) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const OaSpec& spec() const { return spec_; }

 private:
  struct Block {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    Ffn ffn;
  };

  OaSpec spec_;
  mutable ParamStore params_;
  Linear patch_proj_;
  std::vector<Block> blocks_;
  std::vector<Conv2d> cue_convs_;  // stem + stride-2 stages down to the token grid
  LayerNorm final_ln_;
  Linear head_;
};

}  // namespace defas
