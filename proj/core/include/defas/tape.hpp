// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "defas/check.hpp"
#include "defas/image.hpp"

namespace defas {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Geometry of a 2D convolution over an (H*W) x C feature-map matrix.
struct ConvGeom {
  int h = 0, w = 0, cin = 0;
  int k = 3, stride = 1, pad = 1;

  int ho() const { return (h + 2 * pad - k) / stride + 1; }
  int wo() const { return (w + 2 * pad - k) / stride + 1; }
  int patch_len() const { return k * k * cin; }
};

/// Define-by-run reverse-mode tape over dense double matrices. One tape per
/// forward pass; backward() walks nodes in reverse creation order. Scalars
/// are 1x1 matrices. Not thread safe.
class Tape {
 public:
  Tape() = default;

  /// Constant input; gradients are not accumulated into it.
  Var input(Mat value) { return push(std::move(value), false, {}); }

  /// Differentiable leaf (parameter binding).
  Var leaf(Mat value) { return push(std::move(value), true, {}); }

  const Mat& val(Var v) const { return node(v).value; }
  const Mat& grad(Var v) const;

  size_t size() const { return nodes_.size(); }

  // --- elementwise / scalar ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var sq(Var a);
  Var relu(Var a);
  Var gelu(Var a);
  Var tanh_act(Var a);

  // --- linear algebra ---
  Var matmul(Var a, Var b);     // A * B
  Var matmul_nt(Var a, Var b);  // A * B^T
  Var add_rowvec(Var a, Var row);  // row (1 x N) broadcast over rows of a
  Var mul_rowvec(Var a, Var row);  // elementwise, row broadcast over rows

  // --- shape ---
  Var rows(Var a, int begin, int count);
  Var cols(Var a, int begin, int count);
  Var concat_rows(const std::vector<Var>& vs);
  Var concat_cols(const std::vector<Var>& vs);

  // --- normalization / attention pieces ---
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
  Var l2_normalize_rows(Var a, double eps = 1e-12);

  // --- reductions / losses ---
  Var mean_all(Var a);
  Var sum_all(Var a);
  Var mean_rows(Var a);  // column means, result 1 x N
  Var mse_to(Var a, const Mat& target);
  Var softmax_xent(Var logits, const std::vector<int>& labels);
  Var add_weighted(const std::vector<Var>& terms, const std::vector<double>& weights);

  // --- special ---
  /// Identity forward; backward multiplies the gradient by -lambda.
  Var gradient_reversal(Var a, double lambda);
  /// n x n matrix of squared Euclidean distances between rows of a.
  Var pairwise_sqdist(Var a);
  /// Patch extraction for convolution; backward scatter-adds.
  Var im2col(Var x, const ConvGeom& g);

  void backward(Var loss);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves/inputs
  };

  Node& node(Var v) {
    DEFAS_CHECK(v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(), "bad Var id ", v.id);
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node& node(Var v) const {
    DEFAS_CHECK(v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(), "bad Var id ", v.id);
    return nodes_[static_cast<size_t>(v.id)];
  }

  Var push(Mat value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool needs(Var v) const { return node(v).needs_grad; }
  void acc(Var v, const Mat& g);

  std::vector<Node> nodes_;
  Var out_;  // node whose backward closure is currently running
  bool ran_backward_ = false;
};

}  // namespace defas
