// SPDX-License-Identifier: Apache-2.0
#include "defas/tape.hpp"

#include <cmath>

namespace defas {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

const Mat& Tape::grad(Var v) const {
  const Node& n = node(v);
  DEFAS_CHECK(n.needs_grad, "grad() on a non-differentiable node");
  DEFAS_CHECK(ran_backward_, "grad() before backward()");
  return n.grad;
}

void Tape::acc(Var v, const Mat& g) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  DEFAS_CHECK(g.rows() == n.value.rows() && g.cols() == n.value.cols(),
              "gradient shape mismatch");
  n.grad += g;
}

Var Tape::add(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  DEFAS_CHECK(A.rows() == B.rows() && A.cols() == B.cols(), "add: shape mismatch");
  bool ng = needs(a) || needs(b);
  return push(A + B, ng, [a, b](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    t.acc(a, g);
    t.acc(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  DEFAS_CHECK(A.rows() == B.rows() && A.cols() == B.cols(), "sub: shape mismatch");
  bool ng = needs(a) || needs(b);
  return push(A - B, ng, [a, b](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    t.acc(a, g);
    t.acc(b, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  DEFAS_CHECK(A.rows() == B.rows() && A.cols() == B.cols(), "mul: shape mismatch");
  bool ng = needs(a) || needs(b);
  return push(A.cwiseProduct(B), ng, [a, b](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    t.acc(a, g.cwiseProduct(t.val(b)));
    t.acc(b, g.cwiseProduct(t.val(a)));
  });
}

Var Tape::scale(Var a, double s) {
  return push(val(a) * s, needs(a), [a, s](Tape& t) {
    t.acc(a, t.node(t.out_).grad * s);
  });
}

Var Tape::sq(Var a) {
  const Mat& A = val(a);
  return push(A.cwiseProduct(A), needs(a), [a](Tape& t) {
    t.acc(a, 2.0 * t.node(t.out_).grad.cwiseProduct(t.val(a)));
  });
}

Var Tape::relu(Var a) {
  Mat out = val(a).cwiseMax(0.0);
  return push(std::move(out), needs(a), [a](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    Mat mask = (t.val(a).array() > 0.0).cast<double>();
    t.acc(a, g.cwiseProduct(mask));
  });
}

Var Tape::gelu(Var a) {
  const auto x = val(a).array();
  Mat u = (kGeluC * (x + kGeluA * x.cube())).matrix();
  Mat th = u.array().tanh().matrix();
  Mat out = (0.5 * x * (1.0 + th.array())).matrix();
  return push(std::move(out), needs(a), [a, th](Tape& t) {
    const auto g = t.node(t.out_).grad.array();
    const auto x = t.val(a).array();
    const auto tv = th.array();
    auto du = kGeluC * (1.0 + 3.0 * kGeluA * x.square());
    auto dx = 0.5 * (1.0 + tv) + 0.5 * x * (1.0 - tv.square()) * du;
    t.acc(a, (g * dx).matrix());
  });
}

Var Tape::tanh_act(Var a) {
  Mat out = val(a).array().tanh().matrix();
  return push(out, needs(a), [a, out](Tape& t) {
    const auto g = t.node(t.out_).grad.array();
    t.acc(a, (g * (1.0 - out.array().square())).matrix());
  });
}

Var Tape::matmul(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  DEFAS_CHECK(A.cols() == B.rows(), "matmul: inner dims ", A.cols(), " vs ", B.rows());
  bool ng = needs(a) || needs(b);
  return push(A * B, ng, [a, b](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    t.acc(a, g * t.val(b).transpose());
    t.acc(b, t.val(a).transpose() * g);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  DEFAS_CHECK(A.cols() == B.cols(), "matmul_nt: inner dims ", A.cols(), " vs ", B.cols());
  bool ng = needs(a) || needs(b);
  return push(A * B.transpose(), ng, [a, b](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    t.acc(a, g * t.val(b));
    t.acc(b, g.transpose() * t.val(a));
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& A = val(a);
  const Mat& R = val(row);
  DEFAS_CHECK(R.rows() == 1 && R.cols() == A.cols(), "add_rowvec: want 1x", A.cols());
  Mat out = A.rowwise() + R.row(0);
  bool ng = needs(a) || needs(row);
  return push(std::move(out), ng, [a, row](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    t.acc(a, g);
    t.acc(row, g.colwise().sum());
  });
}

Var Tape::mul_rowvec(Var a, Var row) {
  const Mat& A = val(a);
  const Mat& R = val(row);
  DEFAS_CHECK(R.rows() == 1 && R.cols() == A.cols(), "mul_rowvec: want 1x", A.cols());
  Mat out = A.array().rowwise() * R.row(0).array();
  bool ng = needs(a) || needs(row);
  return push(std::move(out), ng, [a, row](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    Mat ga = g.array().rowwise() * t.val(row).row(0).array();
    t.acc(a, ga);
    t.acc(row, g.cwiseProduct(t.val(a)).colwise().sum());
  });
}

Var Tape::rows(Var a, int begin, int count) {
  const Mat& A = val(a);
  DEFAS_CHECK(begin >= 0 && count >= 0 && begin + count <= A.rows(), "rows: bad range");
  Mat out = A.middleRows(begin, count);
  return push(std::move(out), needs(a), [a, begin, count](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    const Mat& A = t.val(a);
    Mat full = Mat::Zero(A.rows(), A.cols());
    full.middleRows(begin, count) = g;
    t.acc(a, full);
  });
}

Var Tape::cols(Var a, int begin, int count) {
  const Mat& A = val(a);
  DEFAS_CHECK(begin >= 0 && count >= 0 && begin + count <= A.cols(), "cols: bad range");
  Mat out = A.middleCols(begin, count);
  return push(std::move(out), needs(a), [a, begin, count](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    const Mat& A = t.val(a);
    Mat full = Mat::Zero(A.rows(), A.cols());
    full.middleCols(begin, count) = g;
    t.acc(a, full);
  });
}

Var Tape::concat_rows(const std::vector<Var>& vs) {
  DEFAS_CHECK(!vs.empty(), "concat_rows: empty");
  Eigen::Index total = 0;
  Eigen::Index nc = val(vs[0]).cols();
  bool ng = false;
  for (Var v : vs) {
    DEFAS_CHECK(val(v).cols() == nc, "concat_rows: column mismatch");
    total += val(v).rows();
    ng = ng || needs(v);
  }
  Mat out(total, nc);
  Eigen::Index at = 0;
  for (Var v : vs) {
    out.middleRows(at, val(v).rows()) = val(v);
    at += val(v).rows();
  }
  std::vector<Var> parts = vs;
  return push(std::move(out), ng, [parts](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    Eigen::Index at = 0;
    for (Var v : parts) {
      Eigen::Index r = t.val(v).rows();
      t.acc(v, g.middleRows(at, r));
      at += r;
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& vs) {
  DEFAS_CHECK(!vs.empty(), "concat_cols: empty");
  Eigen::Index total = 0;
  Eigen::Index nr = val(vs[0]).rows();
  bool ng = false;
  for (Var v : vs) {
    DEFAS_CHECK(val(v).rows() == nr, "concat_cols: row mismatch");
    total += val(v).cols();
    ng = ng || needs(v);
  }
  Mat out(nr, total);
  Eigen::Index at = 0;
  for (Var v : vs) {
    out.middleCols(at, val(v).cols()) = val(v);
    at += val(v).cols();
  }
  std::vector<Var> parts = vs;
  return push(std::move(out), ng, [parts](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    Eigen::Index at = 0;
    for (Var v : parts) {
      Eigen::Index c = t.val(v).cols();
      t.acc(v, g.middleCols(at, c));
      at += c;
    }
  });
}

Var Tape::softmax_rows(Var a) {
  const Mat& A = val(a);
  Mat out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    Eigen::ArrayXd row = A.row(i).array();
    row -= row.maxCoeff();
    Eigen::ArrayXd e = row.exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return push(out, needs(a), [a, out](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    Mat dx(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      double dot = g.row(i).dot(out.row(i));
      dx.row(i) = out.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.acc(a, dx);
  });
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Mat& X = val(x);
  const Mat& G = val(gain);
  const Mat& B = val(bias);
  DEFAS_CHECK(G.rows() == 1 && G.cols() == X.cols(), "layer_norm: gain shape");
  DEFAS_CHECK(B.rows() == 1 && B.cols() == X.cols(), "layer_norm: bias shape");
  const Eigen::Index n = X.cols();
  Mat xhat(X.rows(), n);
  Vec inv_std(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double mu = X.row(i).mean();
    Eigen::RowVectorXd c = X.row(i).array() - mu;
    double var = c.squaredNorm() / static_cast<double>(n);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = c * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * G.row(0).array()).matrix().rowwise() + B.row(0);
  bool ng = needs(x) || needs(gain) || needs(bias);
  return push(std::move(out), ng, [x, gain, bias, xhat, inv_std](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    const Mat& G = t.val(gain);
    const Eigen::Index n = xhat.cols();
    Mat dxhat = g.array().rowwise() * G.row(0).array();
    Mat dx(xhat.rows(), n);
    for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
      double m1 = dxhat.row(i).mean();
      double m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(n);
      dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
    t.acc(x, dx);
    t.acc(gain, g.cwiseProduct(xhat).colwise().sum());
    t.acc(bias, g.colwise().sum());
  });
}

Var Tape::l2_normalize_rows(Var a, double eps) {
  const Mat& A = val(a);
  Vec norm(A.rows());
  Mat out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    norm(i) = std::sqrt(A.row(i).squaredNorm() + eps);
    out.row(i) = A.row(i) / norm(i);
  }
  return push(out, needs(a), [a, out, norm](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    Mat dx(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      double dot = g.row(i).dot(out.row(i));
      dx.row(i) = (g.row(i) - dot * out.row(i)) / norm(i);
    }
    t.acc(a, dx);
  });
}

Var Tape::mean_all(Var a) {
  const Mat& A = val(a);
  double inv = 1.0 / static_cast<double>(A.size());
  Mat out(1, 1);
  out(0, 0) = A.sum() * inv;
  return push(std::move(out), needs(a), [a, inv](Tape& t) {
    double g = t.node(t.out_).grad(0, 0);
    const Mat& A = t.val(a);
    t.acc(a, Mat::Constant(A.rows(), A.cols(), g * inv));
  });
}

Var Tape::sum_all(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  return push(std::move(out), needs(a), [a](Tape& t) {
    double g = t.node(t.out_).grad(0, 0);
    const Mat& A = t.val(a);
    t.acc(a, Mat::Constant(A.rows(), A.cols(), g));
  });
}

Var Tape::mean_rows(Var a) {
  const Mat& A = val(a);
  double inv = 1.0 / static_cast<double>(A.rows());
  Mat out = A.colwise().mean();
  return push(std::move(out), needs(a), [a, inv](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    const Mat& A = t.val(a);
    t.acc(a, (g * inv).replicate(A.rows(), 1));
  });
}

Var Tape::mse_to(Var a, const Mat& target) {
  const Mat& A = val(a);
  DEFAS_CHECK(A.rows() == target.rows() && A.cols() == target.cols(), "mse_to: shape");
  Mat diff = A - target;
  double inv = 1.0 / static_cast<double>(A.size());
  Mat out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return push(std::move(out), needs(a), [a, diff, inv](Tape& t) {
    double g = t.node(t.out_).grad(0, 0);
    t.acc(a, (2.0 * g * inv) * diff);
  });
}

Var Tape::softmax_xent(Var logits, const std::vector<int>& labels) {
  const Mat& L = val(logits);
  DEFAS_CHECK(static_cast<Eigen::Index>(labels.size()) == L.rows(),
              "softmax_xent: ", labels.size(), " labels for ", L.rows(), " rows");
  Mat probs(L.rows(), L.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    int y = labels[static_cast<size_t>(i)];
    DEFAS_CHECK(y >= 0 && y < L.cols(), "softmax_xent: label out of range");
    Eigen::ArrayXd row = L.row(i).array();
    double mx = row.maxCoeff();
    Eigen::ArrayXd e = (row - mx).exp();
    double z = e.sum();
    probs.row(i) = (e / z).matrix();
    loss -= (L(i, y) - mx - std::log(z));
  }
  loss /= static_cast<double>(L.rows());
  Mat out(1, 1);
  out(0, 0) = loss;
  std::vector<int> ys = labels;
  return push(std::move(out), needs(logits), [logits, probs, ys](Tape& t) {
    double g = t.node(t.out_).grad(0, 0);
    Mat dl = probs;
    for (Eigen::Index i = 0; i < dl.rows(); ++i) {
      dl(i, ys[static_cast<size_t>(i)]) -= 1.0;
    }
    t.acc(logits, (g / static_cast<double>(dl.rows())) * dl);
  });
}

Var Tape::add_weighted(const std::vector<Var>& terms, const std::vector<double>& weights) {
  DEFAS_CHECK(!terms.empty() && terms.size() == weights.size(), "add_weighted: arity");
  Mat out = val(terms[0]) * weights[0];
  bool ng = needs(terms[0]);
  for (size_t i = 1; i < terms.size(); ++i) {
    DEFAS_CHECK(val(terms[i]).rows() == out.rows() && val(terms[i]).cols() == out.cols(),
                "add_weighted: shape mismatch");
    out += val(terms[i]) * weights[i];
    ng = ng || needs(terms[i]);
  }
  std::vector<Var> ts = terms;
  std::vector<double> ws = weights;
  return push(std::move(out), ng, [ts, ws](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    for (size_t i = 0; i < ts.size(); ++i) {
      t.acc(ts[i], g * ws[i]);
    }
  });
}

Var Tape::gradient_reversal(Var a, double lambda) {
  return push(val(a), needs(a), [a, lambda](Tape& t) {
    t.acc(a, -lambda * t.node(t.out_).grad);
  });
}

Var Tape::pairwise_sqdist(Var a) {
  const Mat& A = val(a);
  Vec sq = A.rowwise().squaredNorm();
  Mat out = sq.replicate(1, A.rows()) + sq.transpose().replicate(A.rows(), 1) -
            2.0 * (A * A.transpose());
  out = out.cwiseMax(0.0);
  return push(std::move(out), needs(a), [a](Tape& t) {
    const Mat& g = t.node(t.out_).grad;
    const Mat& A = t.val(a);
    Mat s = g + g.transpose();
    Vec rowsum = s.rowwise().sum();
    t.acc(a, 2.0 * (rowsum.asDiagonal() * A - s * A));
  });
}

Var Tape::im2col(Var x, const ConvGeom& g) {
  const Mat& X = val(x);
  DEFAS_CHECK(X.rows() == static_cast<Eigen::Index>(g.h) * g.w && X.cols() == g.cin,
              "im2col: input is ", X.rows(), "x", X.cols(), ", geom wants ",
              g.h * g.w, "x", g.cin);
  const int ho = g.ho();
  const int wo = g.wo();
  const int kk = g.k * g.k;
  // Input pixel index per (output pixel, kernel tap); -1 marks zero padding.
  std::vector<int> map(static_cast<size_t>(ho) * wo * kk, -1);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      int orow = oy * wo + ox;
      for (int ky = 0; ky < g.k; ++ky) {
        int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.k; ++kx) {
          int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.w) continue;
          map[static_cast<size_t>(orow) * kk + ky * g.k + kx] = iy * g.w + ix;
        }
      }
    }
  }
  Mat out = Mat::Zero(static_cast<Eigen::Index>(ho) * wo, static_cast<Eigen::Index>(kk) * g.cin);
  for (int orow = 0; orow < ho * wo; ++orow) {
    for (int p = 0; p < kk; ++p) {
      int ipix = map[static_cast<size_t>(orow) * kk + p];
      if (ipix < 0) continue;
      out.block(orow, static_cast<Eigen::Index>(p) * g.cin, 1, g.cin) = X.row(ipix);
    }
  }
  int cin = g.cin;
  return push(std::move(out), needs(x), [x, map, kk, cin](Tape& t) {
    const Mat& go = t.node(t.out_).grad;
    const Mat& X = t.val(x);
    Mat dx = Mat::Zero(X.rows(), X.cols());
    for (Eigen::Index orow = 0; orow < go.rows(); ++orow) {
      for (int p = 0; p < kk; ++p) {
        int ipix = map[static_cast<size_t>(orow) * kk + p];
        if (ipix < 0) continue;
        dx.row(ipix) += go.block(orow, static_cast<Eigen::Index>(p) * cin, 1, cin);
      }
    }
    t.acc(x, dx);
  });
}

void Tape::backward(Var loss) {
  DEFAS_CHECK(!ran_backward_, "backward() called twice on one tape");
  Node& top = node(loss);
  DEFAS_CHECK(top.value.size() == 1, "backward: loss must be scalar");
  DEFAS_CHECK(top.needs_grad, "backward: loss does not depend on any parameter");
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  top.grad(0, 0) = 1.0;
  ran_backward_ = true;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad || !n.back) continue;
    out_ = Var{i};
    n.back(*this);
  }
}

}  // namespace defas
