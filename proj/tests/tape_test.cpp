// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "defas/nn.hpp"
#include "defas/tape.hpp"
#include "test_util.hpp"

using namespace defas;
using testutil::numeric_grad;
using testutil::random_mat;
using testutil::rel_inf_diff;

namespace {

// Builds the loss twice: once for reverse-mode gradients, once per finite
// difference probe. The builder must only read parameters through Bound.
void check_grads(ParamStore& ps, const std::vector<std::string>& names,
                 const std::function<Var(Bound&)>& builder, double tol = 1e-6) {
  auto loss_value = [&]() {
    Tape t;
    Bound bd(t, ps);
    return t.val(builder(bd))(0, 0);
  };
  Tape t;
  Bound bd(t, ps);
  Var loss = builder(bd);
  t.backward(loss);
  for (const std::string& name : names) {
    CAPTURE(name);
    Mat numeric = numeric_grad(ps, name, loss_value);
    Mat reverse = t.grad(bd(name));
    CHECK(rel_inf_diff(reverse, numeric) < tol);
  }
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(7);
  ParamStore ps;
  ps.add("a", random_mat(rng, 4, 5));
  ps.add("b", random_mat(rng, 4, 5));
  check_grads(ps, {"a", "b"}, [](Bound& bd) {
    Tape& t = bd.tape();
    Var s = t.add(t.mul(bd("a"), bd("b")), t.scale(t.sub(bd("a"), bd("b")), 0.3));
    return t.mean_all(t.sq(s));
  });
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(8);
  ParamStore ps;
  Mat a = random_mat(rng, 5, 6);
  // keep entries away from the relu kink so finite differences are clean
  a = a.unaryExpr([](double v) { return std::abs(v) < 0.05 ? v + 0.1 : v; });
  ps.add("a", a);
  check_grads(ps, {"a"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.relu(bd("a")));
  });
  check_grads(ps, {"a"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.sq(t.gelu(bd("a"))));
  });
  check_grads(ps, {"a"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.sq(t.tanh_act(bd("a"))));
  });
}

TEST_CASE("matmul family gradients match finite differences") {
  Rng rng(9);
  ParamStore ps;
  ps.add("a", random_mat(rng, 3, 4));
  ps.add("b", random_mat(rng, 4, 5));
  ps.add("c", random_mat(rng, 6, 4));
  ps.add("row", random_mat(rng, 1, 5));
  check_grads(ps, {"a", "b", "row"}, [](Bound& bd) {
    Tape& t = bd.tape();
    Var y = t.add_rowvec(t.matmul(bd("a"), bd("b")), bd("row"));
    return t.mean_all(t.sq(y));
  });
}

TEST_CASE("matmul_nt gradient") {
  Rng rng(10);
  ParamStore ps;
  ps.add("a", random_mat(rng, 3, 4));
  ps.add("b", random_mat(rng, 5, 4));
  check_grads(ps, {"a", "b"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.sq(t.matmul_nt(bd("a"), bd("b"))));
  });
}

TEST_CASE("row scaling and slicing gradients") {
  Rng rng(11);
  ParamStore ps;
  ps.add("a", random_mat(rng, 6, 8));
  ps.add("row", random_mat(rng, 1, 8));
  check_grads(ps, {"a", "row"}, [](Bound& bd) {
    Tape& t = bd.tape();
    Var y = t.mul_rowvec(bd("a"), bd("row"));
    Var mid = t.rows(y, 1, 3);
    Var c = t.cols(mid, 2, 4);
    return t.mean_all(t.sq(c));
  });
}

TEST_CASE("concat gradients") {
  Rng rng(12);
  ParamStore ps;
  ps.add("a", random_mat(rng, 3, 4));
  ps.add("b", random_mat(rng, 2, 4));
  ps.add("c", random_mat(rng, 3, 2));
  check_grads(ps, {"a", "b", "c"}, [](Bound& bd) {
    Tape& t = bd.tape();
    Var r = t.concat_rows({bd("a"), bd("b")});
    Var top = t.rows(r, 0, 3);
    Var wide = t.concat_cols({top, bd("c")});
    return t.mean_all(t.sq(wide));
  });
}

TEST_CASE("softmax and normalization gradients") {
  Rng rng(13);
  ParamStore ps;
  ps.add("a", random_mat(rng, 4, 6));
  ps.add("g", Mat::Ones(1, 6) + 0.1 * random_mat(rng, 1, 6));
  ps.add("bia", 0.1 * random_mat(rng, 1, 6));
  check_grads(ps, {"a"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.sq(t.softmax_rows(bd("a"))));
  });
  check_grads(ps, {"a", "g", "bia"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.sq(t.layer_norm_rows(bd("a"), bd("g"), bd("bia"))));
  });
  check_grads(ps, {"a"}, [](Bound& bd) {
    Tape& t = bd.tape();
    return t.mean_all(t.sq(t.l2_normalize_rows(bd("a"))));
  });
}

TEST_CASE("reduction and loss gradients") {
  Rng rng(14);
  ParamStore ps;
  ps.add("a", random_mat(rng, 5, 3));
  Mat target = random_mat(rng, 5, 3);
  std::vector<int> labels = {0, 2, 1, 1, 0};
  check_grads(ps, {"a"}, [&](Bound& bd) {
    Tape& t = bd.tape();
    Var l1 = t.mse_to(bd("a"), target);
    Var l2 = t.softmax_xent(bd("a"), labels);
    Var l3 = t.mean_all(t.mean_rows(bd("a")));
    Var l4 = t.sum_all(bd("a"));
    return t.add_weighted({l1, l2, l3, l4}, {1.0, 0.5, 2.0, 0.01});
  });
}

TEST_CASE("gradient reversal flips and scales the gradient") {
  Rng rng(15);
  ParamStore ps;
  ps.add("a", random_mat(rng, 3, 3));
  Tape t;
  Bound bd(t, ps);
  Var a = bd("a");
  Var plain = t.mean_all(t.sq(a));
  t.backward(plain);
  Mat g_plain = t.grad(a);

  Tape t2;
  Bound bd2(t2, ps);
  Var a2 = bd2("a");
  Var rev = t2.mean_all(t2.sq(t2.gradient_reversal(a2, 0.7)));
  t2.backward(rev);
  Mat g_rev = t2.grad(a2);
  CHECK(rel_inf_diff(g_rev, Mat(-0.7 * g_plain)) < 1e-12);
}

TEST_CASE("pairwise squared distance values and gradient") {
  Rng rng(16);
  ParamStore ps;
  ps.add("a", random_mat(rng, 5, 3));
  const Mat& A = ps.get("a");
  Tape t;
  Bound bd(t, ps);
  Var d = t.pairwise_sqdist(bd("a"));
  const Mat& D = t.val(d);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      double want = (A.row(i) - A.row(j)).squaredNorm();
      CHECK(D(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
  check_grads(ps, {"a"}, [](Bound& bd2) {
    Tape& tt = bd2.tape();
    return tt.mean_all(tt.sq(tt.pairwise_sqdist(bd2("a"))));
  });
}

TEST_CASE("im2col matches direct convolution and is differentiable") {
  Rng rng(17);
  ParamStore ps;
  const int h = 5, w = 6, cin = 2, cout = 3, k = 3;
  ps.add("x", random_mat(rng, h * w, cin));
  ps.add("wt", random_mat(rng, k * k * cin, cout));
  ConvGeom geom{h, w, cin, k, /*stride=*/1, /*pad=*/1};

  Tape t;
  Bound bd(t, ps);
  Var y = t.matmul(t.im2col(bd("x"), geom), bd("wt"));
  const Mat& Y = t.val(y);
  const Mat& X = ps.get("x");
  const Mat& W = ps.get("wt");
  // direct sliding-window reference
  for (int oy = 0; oy < geom.ho(); ++oy) {
    for (int ox = 0; ox < geom.wo(); ++ox) {
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            int iy = oy - 1 + ky, ix = ox - 1 + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < cin; ++ci) {
              acc += X(iy * w + ix, ci) * W((ky * k + kx) * cin + ci, co);
            }
          }
        }
        CHECK(Y(oy * geom.wo() + ox, co) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
  check_grads(ps, {"x", "wt"}, [&](Bound& bd2) {
    Tape& tt = bd2.tape();
    Var out = tt.matmul(tt.im2col(bd2("x"), geom), bd2("wt"));
    return tt.mean_all(tt.sq(out));
  });
}

TEST_CASE("strided convolution geometry") {
  ConvGeom g{8, 8, 4, 3, 2, 1};
  CHECK(g.ho() == 4);
  CHECK(g.wo() == 4);
  ConvGeom g2{7, 7, 1, 3, 2, 1};
  CHECK(g2.ho() == 4);
}

TEST_CASE("layer stack gradient: attention plus ffn") {
  Rng rng(18);
  ParamStore ps;
  const int d = 8, heads = 2, n = 5, m = 3;
  MultiHeadAttention attn(ps, rng, "attn", d, heads);
  Ffn ffn(ps, rng, "ffn", d, 16);
  LayerNorm ln(ps, "ln", d);
  ps.add("x", 0.5 * random_mat(rng, n, d));
  ps.add("cue", 0.5 * random_mat(rng, m, d));

  std::vector<std::string> names;
  for (const std::string& nm : ps.names()) names.push_back(nm);
  check_grads(ps, names, [&](Bound& bd) {
    Tape& t = bd.tape();
    Var x = ln.forward(bd, bd("x"));
    Var y = attn.forward(bd, x, bd("cue"));
    Var z = ffn.forward(bd, t.add(x, y));
    return t.mean_all(t.sq(z));
  }, 2e-6);
}

TEST_CASE("zero-initialized linear output is exactly zero") {
  Rng rng(19);
  ParamStore ps;
  Linear zl(ps, rng, "z", 6, 4, /*bias=*/true, /*zero_weight=*/true);
  Tape t;
  Bound bd(t, ps);
  Var x = t.input(random_mat(rng, 3, 6));
  Var y = zl.forward(bd, x);
  CHECK(t.val(y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("inputs do not accumulate gradients but leaves do") {
  Rng rng(20);
  ParamStore ps;
  ps.add("p", random_mat(rng, 2, 2));
  Tape t;
  Bound bd(t, ps);
  Var x = t.input(random_mat(rng, 2, 2));
  Var loss = t.mean_all(t.sq(t.mul(x, bd("p"))));
  t.backward(loss);
  CHECK(t.grad(bd("p")).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS((void)t.grad(x), Error);
}

TEST_CASE("sgd with momentum follows the classic update rule") {
  ParamStore ps;
  ps.add("p", Mat::Constant(1, 1, 1.0));
  SgdMomentum opt(0.1, 0.9);
  auto do_step = [&]() {
    Tape t;
    Bound bd(t, ps);
    Var loss = t.mean_all(t.sq(bd("p")));  // d/dp = 2p
    t.backward(loss);
    opt.step(bd);
  };
  do_step();  // g=2, v=2, p=1-0.2=0.8
  CHECK(ps.get("p")(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  do_step();  // g=1.6, v=0.9*2+1.6=3.4, p=0.8-0.34=0.46
  CHECK(ps.get("p")(0, 0) == doctest::Approx(0.46).epsilon(1e-12));
}

TEST_CASE("adam first step moves by approximately lr") {
  ParamStore ps;
  ps.add("p", Mat::Constant(1, 1, 3.0));
  Adam opt(0.01);
  Tape t;
  Bound bd(t, ps);
  Var loss = t.mean_all(t.sq(bd("p")));
  t.backward(loss);
  opt.step(bd);
  CHECK(ps.get("p")(0, 0) == doctest::Approx(3.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("backward on a second tape is independent") {
  ParamStore ps;
  ps.add("p", Mat::Constant(2, 2, 2.0));
  for (int rep = 0; rep < 3; ++rep) {
    Tape t;
    Bound bd(t, ps);
    Var loss = t.sum_all(t.sq(bd("p")));
    t.backward(loss);
    CHECK(t.grad(bd("p"))(0, 0) == doctest::Approx(4.0));
  }
}

}  // TEST_SUITE
