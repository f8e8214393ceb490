// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "defas/image.hpp"
#include "defas/nn.hpp"
#include "defas/rng.hpp"

namespace defas {

/// Linear-beta noising schedule. `alpha[t]` is the cumulative product
/// prod_{i<=t}(1-beta_i) with alpha[0] = 1.
struct NoiseSchedule {
  int T = 0;
  double beta_min = 0.0, beta_max = 0.0;
  Vec beta;   // size T+1, beta[0] unused
  Vec alpha;  // size T+1, strictly decreasing for t >= 1

  // sqrt((1-alpha[t])/alpha[t]); grows strictly with t.
  double bound_coef(int t) const;
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

/// Latents are (H*W) x C matrices in [-1,1]; images live in [0,1].
Mat image_to_latent(const Image& im);
Image latent_to_image(const Mat& z, int h, int w);

/// z_t = sqrt(alpha[t]) z0 + sqrt(1-alpha[t]) eps.
Mat forward_sample(const NoiseSchedule& ns, const Mat& z0, int t, const Mat& eps);

/// (z_t - sqrt(1-alpha[t]) eps) / sqrt(alpha[t]); shared by the deterministic
/// reverse step and the single-step shortcut so both agree bit for bit.
Mat invert_forward(const NoiseSchedule& ns, const Mat& z_t, const Mat& eps, int t);

/// Deterministic reverse update (no stochastic term).
Mat ddim_step(const NoiseSchedule& ns, const Mat& z_t, const Mat& eps_pred, int t, int t_prev);

/// Descending time indices from t_hat to 0 with uniform stride, n_steps+1
/// entries, strictly decreasing.
std::vector<int> sampling_times(int t_hat, int n_steps);

class EpsPredictor {
 public:
  virtual ~EpsPredictor() = default;
  // z: (H*W) x C latent; t in [1,T]; id_tokens may be empty when unused.
  virtual Mat predict(const Mat& z, int t, const Mat& id_tokens) const = 0;
};

/// Knows the true z0; returns the exact noise consistent with any z_t. Used
/// by round-trip and bound checks.
class OracleEps : public EpsPredictor {
 public:
  OracleEps(const NoiseSchedule& ns, Mat z0) : ns_(&ns), z0_(std::move(z0)) {}
  Mat predict(const Mat& z, int t, const Mat& id_tokens) const override;

 private:
  const NoiseSchedule* ns_;
  Mat z0_;
};

Mat generate(const NoiseSchedule& ns, const EpsPredictor& pred, const Mat& z_that, int t_hat,
             int n_steps, const Mat& id_tokens);

/// Same chain written as z_that/sqrt(alpha[t_hat]) minus the coefficient-
/// weighted sum of predicted noises; cross-checks the step recursion.
Mat generate_telescoped(const NoiseSchedule& ns, const EpsPredictor& pred, const Mat& z_that,
                        int t_hat, int n_steps, const Mat& id_tokens);

Mat single_step_reconstruct(const NoiseSchedule& ns, const EpsPredictor& pred, const Mat& z_t,
                            int t, const Mat& id_tokens);

/// Frozen projection of low-frequency image content onto a small token
/// matrix; stands in for a pretrained identity embedder.
class IdentityEncoder {
 public:
  IdentityEncoder(int tokens, int dim, int image_size, int channels, uint64_t seed);
  Mat encode(const Image& im) const;  // tokens x dim, rows unit norm
  int tokens() const { return tokens_; }
  int dim() const { return dim_; }

 private:
  int tokens_, dim_, pool_grid_, channels_;
  Mat proj_;
};

struct DfgSpec {
  int image_size = 32;
  int channels = 3;
  int width = 16;     // conv feature channels
  int time_dim = 32;  // sinusoidal embedding size
  int id_dim = 16;    // identity token width
};

Mat sinusoidal_embedding(int t, int dim);

/// Conditioned noise model: two convolutions with time/identity feature
/// modulation, then a linear head back to latent channels.
class NoisePredictor : public EpsPredictor {
 public:
  NoisePredictor(const DfgSpec& spec, uint64_t init_seed);

  Mat predict(const Mat& z, int t, const Mat& id_tokens) const override;
  Var predict_on(Bound& bd, Var z, int t, const Mat& id_tokens) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const DfgSpec& spec() const { return spec_; }

 private:
  DfgSpec spec_;
  mutable ParamStore params_;
  Conv2d c1_, c2_;
  Linear head_;
  Linear time1_, time2_;
  Linear id1_, id2_;
};

double dfg_loss(const NoiseSchedule& ns, const Mat& z0, int t, const Mat& id_tokens,
                const Mat& eps, const EpsPredictor& pred);

/// Tape version used by the training loop; z0/eps enter as constants.
Var dfg_loss_on(Bound& bd, const NoiseSchedule& ns, const NoisePredictor& pred, const Mat& z0,
                int t, const Mat& id_tokens, const Mat& eps);

struct DfgExample {
  Mat z0;        // latent
  Mat id_tokens;
  bool real = true;
};

struct DfgTrainOpts {
  int steps = 3000;
  int batch = 16;
  double lr = 0.001;
  uint64_t seed = 1;
  std::function<void(int step, double loss)> on_step;  // optional
};

/// Real-only denoiser training; rejects any non-real example up front.
void train_dfg(NoisePredictor& pred, const NoiseSchedule& ns,
               const std::vector<DfgExample>& pool, const DfgTrainOpts& opts);

}  // namespace defas
