// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "defas/rng.hpp"
#include "defas/tape.hpp"

namespace defas {

/// Named parameter tensors in insertion order.
class ParamStore {
 public:
  Mat& add(const std::string& name, Mat init);
  Mat& get(const std::string& name);
  const Mat& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  size_t count() const { return entries_.size(); }
  size_t scalar_count() const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<Mat> entries_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, size_t> index_;
};

/// Per-step binding of ParamStore entries onto a Tape. Each parameter becomes
/// a differentiable leaf the first time it is requested.
class Bound {
 public:
  Bound(Tape& tape, ParamStore& params) : tape_(&tape), params_(&params) {}

  Var operator()(const std::string& name);

  Tape& tape() { return *tape_; }
  ParamStore& params() { return *params_; }
  const std::unordered_map<std::string, Var>& vars() const { return vars_; }

 private:
  Tape* tape_;
  ParamStore* params_;
  std::unordered_map<std::string, Var> vars_;
};

// ---- layers ----

struct Linear {
  std::string w, b;
  int in = 0, out = 0;
  bool has_bias = true;

  Linear() = default;
  // zero_weight makes the layer an exact no-op at init (used where a branch
  // must not perturb the trunk until training moves it).
  Linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in, int out,
         bool bias = true, bool zero_weight = false);

  Var forward(Bound& bd, Var x) const;
};

struct LayerNorm {
  std::string gain, bias;
  int dim = 0;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int dim);

  Var forward(Bound& bd, Var x) const;
};

struct MultiHeadAttention {
  int d_model = 0, heads = 0, d_head = 0;
  Linear wq, wk, wv, wo;

  MultiHeadAttention() = default;
  // kv_dim < 0 means keys/values share d_model (self-attention layout).
  MultiHeadAttention(ParamStore& ps, Rng& rng, const std::string& prefix,
                     int d_model, int heads, bool zero_out = false, int kv_dim = -1);

  // q_in: Nq x d_model, kv_in: Nk x kv_dim.
  Var forward(Bound& bd, Var q_in, Var kv_in) const;
};

struct Ffn {
  Linear fc1, fc2;

  Ffn() = default;
  Ffn(ParamStore& ps, Rng& rng, const std::string& prefix, int d_model, int hidden);

  Var forward(Bound& bd, Var x) const;
};

/// 2D convolution over an (H*W) x Cin feature-map matrix.
struct Conv2d {
  std::string w, b;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore& ps, Rng& rng, const std::string& prefix, int cin, int cout,
         int k, int stride, int pad);

  ConvGeom geom(int h, int w) const;
  Var forward(Bound& bd, Var x, int h, int w) const;
};

// ---- optimizers ----

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(Bound& bd);

 private:
  double lr_, momentum_;
  std::unordered_map<std::string, Mat> velocity_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(Bound& bd);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Mat> m_, v_;
};

}  // namespace defas
