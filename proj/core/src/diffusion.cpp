// SPDX-License-Identifier: Apache-2.0
#include "defas/diffusion.hpp"

#include <cmath>

#include "defas/image.hpp"

namespace defas {

double NoiseSchedule::bound_coef(int t) const {
  DEFAS_CHECK(t >= 0 && t <= T, "bound_coef: t=", t, " outside [0,", T, "]");
  return std::sqrt((1.0 - alpha(t)) / alpha(t));
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  DEFAS_CHECK(T >= 1, "make_schedule: T=", T);
  DEFAS_CHECK(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0,
              "make_schedule: bad beta range [", beta_min, ",", beta_max, "]");
  NoiseSchedule ns;
  ns.T = T;
  ns.beta_min = beta_min;
  ns.beta_max = beta_max;
  ns.beta = Vec::Zero(T + 1);
  ns.alpha = Vec::Ones(T + 1);
  for (int t = 1; t <= T; ++t) {
    double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    ns.beta(t) = beta_min + (beta_max - beta_min) * frac;
    ns.alpha(t) = ns.alpha(t - 1) * (1.0 - ns.beta(t));
  }
  return ns;
}

Mat image_to_latent(const Image& im) {
  Mat z(static_cast<Eigen::Index>(im.h) * im.w, im.c);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int c = 0; c < im.c; ++c) z(y * im.w + x, c) = 2.0 * im.at(y, x, c) - 1.0;
  return z;
}

Image latent_to_image(const Mat& z, int h, int w) {
  DEFAS_CHECK(z.rows() == static_cast<Eigen::Index>(h) * w, "latent_to_image: shape");
  Image im = Image::zeros(h, w, static_cast<int>(z.cols()));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < im.c; ++c) im.at(y, x, c) = (z(y * w + x, c) + 1.0) * 0.5;
  return im;
}

Mat forward_sample(const NoiseSchedule& ns, const Mat& z0, int t, const Mat& eps) {
  DEFAS_CHECK(t >= 0 && t <= ns.T, "forward_sample: t=", t, " outside [0,", ns.T, "]");
  DEFAS_CHECK(eps.rows() == z0.rows() && eps.cols() == z0.cols(), "forward_sample: shape");
  double a = ns.alpha(t);
  return std::sqrt(a) * z0 + std::sqrt(1.0 - a) * eps;
}

Mat invert_forward(const NoiseSchedule& ns, const Mat& z_t, const Mat& eps, int t) {
  DEFAS_CHECK(t >= 1 && t <= ns.T, "invert_forward: t=", t, " outside [1,", ns.T, "]");
  DEFAS_CHECK(eps.rows() == z_t.rows() && eps.cols() == z_t.cols(), "invert_forward: shape");
  double a = ns.alpha(t);
  return (z_t - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
}

Mat ddim_step(const NoiseSchedule& ns, const Mat& z_t, const Mat& eps_pred, int t, int t_prev) {
  DEFAS_CHECK(t_prev >= 0 && t_prev < t && t <= ns.T, "ddim_step: need 0 <= ", t_prev, " < ",
              t, " <= ", ns.T);
  Mat z0_pred = invert_forward(ns, z_t, eps_pred, t);
  if (t_prev == 0) return z0_pred;  // noise coefficient vanishes at alpha[0]=1
  double ap = ns.alpha(t_prev);
  return std::sqrt(ap) * z0_pred + std::sqrt(1.0 - ap) * eps_pred;
}

std::vector<int> sampling_times(int t_hat, int n_steps) {
  DEFAS_CHECK(n_steps >= 1 && n_steps <= t_hat, "sampling_times: need 1 <= n_steps=", n_steps,
              " <= t_hat=", t_hat);
  std::vector<int> times(static_cast<size_t>(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) {
    double pos = static_cast<double>(t_hat) * (n_steps - k) / n_steps;
    times[static_cast<size_t>(k)] = static_cast<int>(std::lround(pos));
  }
  times.front() = t_hat;
  times.back() = 0;
  for (size_t i = 1; i < times.size(); ++i) {
    DEFAS_CHECK(times[i] < times[i - 1], "sampling_times: non-decreasing stride");
  }
  return times;
}

Mat OracleEps::predict(const Mat& z, int t, const Mat&) const {
  double a = ns_->alpha(t);
  return (z - std::sqrt(a) * z0_) / std::sqrt(1.0 - a);
}

Mat generate(const NoiseSchedule& ns, const EpsPredictor& pred, const Mat& z_that, int t_hat,
             int n_steps, const Mat& id_tokens) {
  DEFAS_CHECK(t_hat >= 0 && t_hat <= ns.T, "generate: t_hat=", t_hat);
  if (t_hat == 0) return z_that;
  std::vector<int> times = sampling_times(t_hat, n_steps);
  Mat z = z_that;
  for (size_t i = 0; i + 1 < times.size(); ++i) {
    Mat eps = pred.predict(z, times[i], id_tokens);
    z = ddim_step(ns, z, eps, times[i], times[i + 1]);
  }
  return z;
}

Mat generate_telescoped(const NoiseSchedule& ns, const EpsPredictor& pred, const Mat& z_that,
                        int t_hat, int n_steps, const Mat& id_tokens) {
  DEFAS_CHECK(t_hat >= 0 && t_hat <= ns.T, "generate_telescoped: t_hat=", t_hat);
  if (t_hat == 0) return z_that;
  std::vector<int> times = sampling_times(t_hat, n_steps);
  Mat acc = z_that / std::sqrt(ns.alpha(t_hat));
  Mat z = z_that;
  for (size_t i = 0; i + 1 < times.size(); ++i) {
    int t = times[i], tp = times[i + 1];
    Mat eps = pred.predict(z, t, id_tokens);
    acc -= (ns.bound_coef(t) - ns.bound_coef(tp)) * eps;
    z = ddim_step(ns, z, eps, t, tp);
  }
  return acc;
}

Mat single_step_reconstruct(const NoiseSchedule& ns, const EpsPredictor& pred, const Mat& z_t,
                            int t, const Mat& id_tokens) {
  DEFAS_CHECK(t >= 1 && t <= ns.T, "single_step_reconstruct: t=", t);
  return invert_forward(ns, z_t, pred.predict(z_t, t, id_tokens), t);
}

IdentityEncoder::IdentityEncoder(int tokens, int dim, int image_size, int channels,
                                 uint64_t seed)
    : tokens_(tokens), dim_(dim), pool_grid_(8), channels_(channels) {
  DEFAS_CHECK(image_size % pool_grid_ == 0, "IdentityEncoder: image size ", image_size,
              " not divisible by pooling grid ", pool_grid_);
  Rng rng(seed);
  int feat = pool_grid_ * pool_grid_ * channels;
  proj_ = Mat(feat, tokens * dim);
  rng.fill_normal(proj_.data(), static_cast<size_t>(proj_.size()));
  proj_ *= 1.0 / std::sqrt(static_cast<double>(feat));
}

Mat IdentityEncoder::encode(const Image& im) const {
  DEFAS_CHECK(im.c == channels_, "IdentityEncoder: channel mismatch");
  Image soft = gaussian_blur(im, 1);
  int cell = im.h / pool_grid_;
  Eigen::RowVectorXd feat(pool_grid_ * pool_grid_ * channels_);
  for (int gy = 0; gy < pool_grid_; ++gy) {
    for (int gx = 0; gx < pool_grid_; ++gx) {
      for (int c = 0; c < channels_; ++c) {
        double acc = 0.0;
        for (int y = gy * cell; y < (gy + 1) * cell; ++y)
          for (int x = gx * cell; x < (gx + 1) * cell; ++x) acc += soft.at(y, x, c);
        feat((gy * pool_grid_ + gx) * channels_ + c) = acc / (cell * cell);
      }
    }
  }
  Eigen::RowVectorXd projected = feat * proj_;
  Mat tok(tokens_, dim_);
  for (int k = 0; k < tokens_; ++k) tok.row(k) = projected.segment(k * dim_, dim_);
  for (Eigen::Index i = 0; i < tok.rows(); ++i) {
    double n = tok.row(i).norm();
    if (n > 1e-12) tok.row(i) /= n;
  }
  return tok;
}

Mat sinusoidal_embedding(int t, int dim) {
  DEFAS_CHECK(dim >= 2 && dim % 2 == 0, "sinusoidal_embedding: dim=", dim);
  int half = dim / 2;
  Mat emb(1, dim);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    emb(0, 2 * i) = std::sin(t * freq);
    emb(0, 2 * i + 1) = std::cos(t * freq);
  }
  return emb;
}

NoisePredictor::NoisePredictor(const DfgSpec& spec, uint64_t init_seed) : spec_(spec) {
  Rng rng(init_seed);
  c1_ = Conv2d(params_, rng, "c1", spec.channels, spec.width, 3, 1, 1);
  c2_ = Conv2d(params_, rng, "c2", spec.width, spec.width, 3, 1, 1);
  head_ = Linear(params_, rng, "head", spec.width, spec.channels);
  time1_ = Linear(params_, rng, "time1", spec.time_dim, spec.width);
  time2_ = Linear(params_, rng, "time2", spec.width, 2 * spec.width);
  id1_ = Linear(params_, rng, "id1", spec.id_dim, spec.width);
  id2_ = Linear(params_, rng, "id2", spec.width, 2 * spec.width);
}

Var NoisePredictor::predict_on(Bound& bd, Var z, int t, const Mat& id_tokens) const {
  Tape& tp = bd.tape();
  const int s = spec_.image_size;
  DEFAS_CHECK(tp.val(z).rows() == static_cast<Eigen::Index>(s) * s &&
                  tp.val(z).cols() == spec_.channels,
              "NoisePredictor: latent shape mismatch");

  Var temb = tp.input(sinusoidal_embedding(t, spec_.time_dim));
  Var tfilm = time2_.forward(bd, tp.gelu(time1_.forward(bd, temb)));

  Mat id_pool;
  if (id_tokens.size() == 0) {
    id_pool = Mat::Zero(1, spec_.id_dim);
  } else {
    DEFAS_CHECK(id_tokens.cols() == spec_.id_dim, "NoisePredictor: id token width");
    id_pool = id_tokens.colwise().mean();
  }
  Var ifilm = id2_.forward(bd, tp.gelu(id1_.forward(bd, tp.input(id_pool))));

  auto film = [&](Var h, Var f) {
    Var scale = tp.cols(f, 0, spec_.width);
    Var shift = tp.cols(f, spec_.width, spec_.width);
    Var scaled = tp.add(h, tp.mul_rowvec(h, scale));  // h * (1 + scale)
    return tp.add_rowvec(scaled, shift);
  };

  Var h = tp.relu(c1_.forward(bd, z, s, s));
  h = film(h, tfilm);
  h = film(h, ifilm);
  h = tp.relu(c2_.forward(bd, h, s, s));
  return head_.forward(bd, h);
}

Mat NoisePredictor::predict(const Mat& z, int t, const Mat& id_tokens) const {
  Tape tp;
  Bound bd(tp, params_);
  Var out = predict_on(bd, tp.input(z), t, id_tokens);
  return tp.val(out);
}

double dfg_loss(const NoiseSchedule& ns, const Mat& z0, int t, const Mat& id_tokens,
                const Mat& eps, const EpsPredictor& pred) {
  Mat z_t = forward_sample(ns, z0, t, eps);
  Mat got = pred.predict(z_t, t, id_tokens);
  return (got - eps).squaredNorm() / static_cast<double>(eps.size());
}

Var dfg_loss_on(Bound& bd, const NoiseSchedule& ns, const NoisePredictor& pred, const Mat& z0,
                int t, const Mat& id_tokens, const Mat& eps) {
  Tape& tp = bd.tape();
  Mat z_t = forward_sample(ns, z0, t, eps);
  Var got = pred.predict_on(bd, tp.input(z_t), t, id_tokens);
  return tp.mse_to(got, eps);
}

void train_dfg(NoisePredictor& pred, const NoiseSchedule& ns,
               const std::vector<DfgExample>& pool, const DfgTrainOpts& opts) {
  DEFAS_CHECK(!pool.empty(), "train_dfg: empty pool");
  for (const DfgExample& ex : pool) {
    DEFAS_CHECK(ex.real, "train_dfg: pool contains a non-real sample");
  }
  Rng rng(opts.seed);
  Adam opt(opts.lr);
  const double inv_batch = 1.0 / opts.batch;
  for (int step = 0; step < opts.steps; ++step) {
    Tape tp;
    Bound bd(tp, pred.params());
    std::vector<Var> terms;
    std::vector<double> weights(static_cast<size_t>(opts.batch), inv_batch);
    terms.reserve(static_cast<size_t>(opts.batch));
    for (int b = 0; b < opts.batch; ++b) {
      const DfgExample& ex = pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
      int t = rng.uniform_int(1, ns.T);
      Mat eps(ex.z0.rows(), ex.z0.cols());
      rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      terms.push_back(dfg_loss_on(bd, ns, pred, ex.z0, t, ex.id_tokens, eps));
    }
    Var loss = tp.add_weighted(terms, weights);
    tp.backward(loss);
    opt.step(bd);
    if (opts.on_step) opts.on_step(step, tp.val(loss)(0, 0));
  }
}

}  // namespace defas
