// SPDX-License-Identifier: Apache-2.0
#include "defas/nn.hpp"

#include <cmath>

namespace defas {

Mat& ParamStore::add(const std::string& name, Mat init) {
  DEFAS_CHECK(!has(name), "duplicate parameter ", name);
  index_[name] = entries_.size();
  names_.push_back(name);
  entries_.push_back(std::move(init));
  return entries_.back();
}

Mat& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  DEFAS_CHECK(it != index_.end(), "unknown parameter ", name);
  return entries_[it->second];
}

const Mat& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  DEFAS_CHECK(it != index_.end(), "unknown parameter ", name);
  return entries_[it->second];
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const Mat& m : entries_) n += static_cast<size_t>(m.size());
  return n;
}

Var Bound::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  Var v = tape_->leaf(params_->get(name));
  vars_.emplace(name, v);
  return v;
}

namespace {

Mat glorot(Rng& rng, int rows, int cols) {
  double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-s, s);
  return m;
}

Mat he_normal(Rng& rng, int rows, int cols, int fan_in) {
  double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  Mat m(rows, cols);
  rng.fill_normal(m.data(), static_cast<size_t>(m.size()));
  return m * s;
}

}  // namespace

Linear::Linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in_, int out_,
               bool bias, bool zero_weight)
    : w(prefix + ".w"), b(prefix + ".b"), in(in_), out(out_), has_bias(bias) {
  ps.add(w, zero_weight ? Mat::Zero(in, out) : glorot(rng, in, out));
  if (has_bias) ps.add(b, Mat::Zero(1, out));
}

Var Linear::forward(Bound& bd, Var x) const {
  Tape& t = bd.tape();
  Var y = t.matmul(x, bd(w));
  if (has_bias) y = t.add_rowvec(y, bd(b));
  return y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim_)
    : gain(prefix + ".g"), bias(prefix + ".b"), dim(dim_) {
  ps.add(gain, Mat::Ones(1, dim));
  ps.add(bias, Mat::Zero(1, dim));
}

Var LayerNorm::forward(Bound& bd, Var x) const {
  return bd.tape().layer_norm_rows(x, bd(gain), bd(bias));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, Rng& rng, const std::string& prefix,
                                       int d_model_, int heads_, bool zero_out, int kv_dim)
    : d_model(d_model_), heads(heads_), d_head(d_model_ / heads_) {
  DEFAS_CHECK(d_model % heads == 0, "d_model ", d_model, " not divisible by ", heads, " heads");
  if (kv_dim < 0) kv_dim = d_model;
  wq = Linear(ps, rng, prefix + ".q", d_model, d_model);
  wk = Linear(ps, rng, prefix + ".k", kv_dim, d_model);
  wv = Linear(ps, rng, prefix + ".v", kv_dim, d_model);
  wo = Linear(ps, rng, prefix + ".o", d_model, d_model, true, zero_out);
}

Var MultiHeadAttention::forward(Bound& bd, Var q_in, Var kv_in) const {
  Tape& t = bd.tape();
  Var q = wq.forward(bd, q_in);
  Var k = wk.forward(bd, kv_in);
  Var v = wv.forward(bd, kv_in);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Var> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = t.cols(q, h * d_head, d_head);
    Var kh = t.cols(k, h * d_head, d_head);
    Var vh = t.cols(v, h * d_head, d_head);
    Var scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
    Var attn = t.softmax_rows(scores);
    head_outs.push_back(t.matmul(attn, vh));
  }
  return wo.forward(bd, t.concat_cols(head_outs));
}

Ffn::Ffn(ParamStore& ps, Rng& rng, const std::string& prefix, int d_model, int hidden) {
  fc1 = Linear(ps, rng, prefix + ".fc1", d_model, hidden);
  fc2 = Linear(ps, rng, prefix + ".fc2", hidden, d_model);
}

Var Ffn::forward(Bound& bd, Var x) const {
  return fc2.forward(bd, bd.tape().gelu(fc1.forward(bd, x)));
}

Conv2d::Conv2d(ParamStore& ps, Rng& rng, const std::string& prefix, int cin_, int cout_,
               int k_, int stride_, int pad_)
    : w(prefix + ".w"), b(prefix + ".b"), cin(cin_), cout(cout_), k(k_), stride(stride_),
      pad(pad_) {
  ps.add(w, he_normal(rng, k * k * cin, cout, k * k * cin));
  ps.add(b, Mat::Zero(1, cout));
}

ConvGeom Conv2d::geom(int h, int w_) const {
  ConvGeom g;
  g.h = h;
  g.w = w_;
  g.cin = cin;
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  return g;
}

Var Conv2d::forward(Bound& bd, Var x, int h, int w_) const {
  Tape& t = bd.tape();
  Var cols = t.im2col(x, geom(h, w_));
  return t.add_rowvec(t.matmul(cols, bd(w)), bd(b));
}

void SgdMomentum::step(Bound& bd) {
  Tape& t = bd.tape();
  ParamStore& ps = bd.params();
  for (const auto& [name, var] : bd.vars()) {
    const Mat& g = t.grad(var);
    Mat& vel = velocity_.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
    vel = momentum_ * vel + g;
    ps.get(name) -= lr_ * vel;
  }
}

void Adam::step(Bound& bd) {
  Tape& t = bd.tape();
  ParamStore& ps = bd.params();
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, var] : bd.vars()) {
    const Mat& g = t.grad(var);
    Mat& m = m_.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
    Mat& v = v_.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    ps.get(name).array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

}  // namespace defas
