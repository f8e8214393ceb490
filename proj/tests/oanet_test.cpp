// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>

#include <doctest.h>

#include "defas/oanet.hpp"
#include "test_util.hpp"

using namespace defas;
using defas::testutil::numeric_grad;
using defas::testutil::rel_inf_diff;

namespace {

OaSpec tiny_spec() {
  OaSpec s;
  s.image_size = 8;
  s.channels = 3;
  s.patch = 4;
  s.d_model = 8;
  s.blocks = 1;
  s.heads = 2;
  s.cross_heads = 2;
  s.cue_tokens = 4;
  s.cue_dim = 4;
  s.ffn_hidden = 16;
  return s;
}

Image random_image(Rng& rng, int size, int c, double lo = 0.0, double hi = 1.0) {
  Image im = Image::zeros(size, size, c);
  for (Eigen::Index i = 0; i < im.data.size(); ++i) im.data[i] = rng.uniform(lo, hi);
  return im;
}

double xent_loss(const OaNet& net, const Image& im, const Image& cue, int label) {
  Tape t;
  Bound bd(t, const_cast<ParamStore&>(net.params()));
  Var logits = net.logits_on(bd, net.feature_on(bd, im, cue));
  return t.val(t.softmax_xent(logits, {label}))(0, 0);
}

}  // namespace

TEST_SUITE_BEGIN("oanet");

TEST_CASE("patch extraction counts and layout") {
  Image im = Image::zeros(32, 32, 3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) im.at(y, x, c) = y + 0.01 * x + 0.0001 * c;
  Mat p = extract_patches(im, 4);
  CHECK(p.rows() == 64);
  CHECK(p.cols() == 4 * 4 * 3);
  // second patch of the first row starts at x=4
  CHECK(p(1, 0) == doctest::Approx(0.0 + 0.01 * 4.0).epsilon(1e-12));
  // patch row stride: patch (1,0) starts at y=4
  CHECK(p(8, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS(extract_patches(im, 5));

  Image big = Image::zeros(224, 224, 3);
  CHECK(extract_patches(big, 16).rows() == 196);
}

TEST_CASE("patch tokens equal positional embeddings for a zero image") {
  OaNet net(tiny_spec(), 3);
  Tape t;
  Bound bd(t, net.params());
  Image zero = Image::zeros(8, 8, 3);
  Var tok = net.patch_tokens_on(bd, zero);
  CHECK(t.val(tok) == net.params().get("patch.pos"));
}

TEST_CASE("zero cue encodes to the cue positional embeddings at init") {
  OaNet net(tiny_spec(), 5);
  Tape t;
  Bound bd(t, net.params());
  Image zero = Image::zeros(8, 8, 3);
  Var tok = net.cue_tokens_on(bd, zero);
  // conv biases start at zero, so nothing but the embedding remains
  CHECK(t.val(tok) == net.params().get("cue.pos"));
  CHECK(t.val(tok).rows() == 4);
  CHECK(t.val(tok).cols() == 4);
}

TEST_CASE("cue encoder output shapes match the configured token grid") {
  OaSpec s;  // defaults: 32x32, 16 tokens x 32 dims
  OaNet net(s, 1);
  Tape t;
  Bound bd(t, net.params());
  Rng rng(2);
  Image cue = random_image(rng, 32, 3, -0.2, 0.2);
  Var tok = net.cue_tokens_on(bd, cue);
  CHECK(t.val(tok).rows() == 16);
  CHECK(t.val(tok).cols() == 32);

  Image wrong = Image::zeros(16, 16, 3);
  CHECK_THROWS(net.cue_tokens_on(bd, wrong));
}

TEST_CASE("paper-scale shapes: 196 patch tokens, 49x512 cue tokens") {
  OaSpec s;
  s.image_size = 224;
  s.patch = 16;
  s.d_model = 64;
  s.blocks = 1;
  s.heads = 4;
  s.cross_heads = 4;
  s.cue_tokens = 49;
  s.cue_dim = 512;
  s.ffn_hidden = 64;
  OaNet net(s, 7);
  CHECK(s.n_patches() == 196);
  Tape t;
  Bound bd(t, net.params());
  Image im = Image::zeros(224, 224, 3);
  Var ptok = net.patch_tokens_on(bd, im);
  CHECK(t.val(ptok).rows() == 196);
  CHECK(t.val(ptok).cols() == 64);
  Var ctok = net.cue_tokens_on(bd, im);
  CHECK(t.val(ctok).rows() == 49);
  CHECK(t.val(ctok).cols() == 512);
}

TEST_CASE("classify is a stable two-class softmax") {
  CHECK(classify({0.0, 0.0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(classify({-10.0, 10.0}) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(classify({10.0, -10.0}) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(classify({500.0, 501.0}) > 0.5);  // no overflow
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const double s = classify({rng.normal(0, 5), rng.normal(0, 5)});
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("fresh model output is exactly independent of the cue") {
  OaNet net(tiny_spec(), 11);
  Rng rng(4);
  Image im = random_image(rng, 8, 3);
  Image cue_a = random_image(rng, 8, 3, -0.3, 0.3);
  Image cue_b = random_image(rng, 8, 3, -0.3, 0.3);
  Image cue_zero = Image::zeros(8, 8, 3);
  FASFeature fa = net.forward(im, cue_a);
  FASFeature fb = net.forward(im, cue_b);
  FASFeature fz = net.forward(im, cue_zero);
  CHECK(fa.logits == fb.logits);
  CHECK(fa.logits == fz.logits);
  CHECK(fa.feature == fb.feature);
  // and the whole path is deterministic
  FASFeature fa2 = net.forward(im, cue_a);
  CHECK(fa.logits == fa2.logits);
}

TEST_CASE("cross-attention output projections receive gradient despite zero init") {
  OaNet net(tiny_spec(), 13);
  Rng rng(9);
  Image im = random_image(rng, 8, 3);
  Image cue = random_image(rng, 8, 3, -0.3, 0.3);
  Tape t;
  Bound bd(t, net.params());
  Var loss = t.softmax_xent(net.logits_on(bd, net.feature_on(bd, im, cue)), {1});
  t.backward(loss);
  const Var wout = bd("blk0.cross.o.w");
  CHECK(net.params().get("blk0.cross.o.w").isZero(0.0));
  CHECK(t.grad(wout).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("analytic gradients match finite differences on a tiny model") {
  OaNet net(tiny_spec(), 17);
  Rng rng(21);
  Image im = random_image(rng, 8, 3);
  Image cue = random_image(rng, 8, 3, -0.3, 0.3);
  auto loss_fn = [&]() { return xent_loss(net, im, cue, 1); };

  Tape t;
  Bound bd(t, net.params());
  Var loss = t.softmax_xent(net.logits_on(bd, net.feature_on(bd, im, cue)), {1});
  t.backward(loss);

  for (const char* name : {"blk0.cross.o.w", "blk0.cross.k.w", "patch.proj.w", "patch.pos",
                           "cue.pos", "cue.conv0.w", "head.w", "blk0.ffn.fc1.w"}) {
    CAPTURE(name);
    Mat num = numeric_grad(net.params(), name, loss_fn);
    CHECK(rel_inf_diff(t.grad(bd(name)), num) < 1e-4);
  }
}

TEST_CASE("training opens the cue branch and makes token order matter") {
  OaNet net(tiny_spec(), 23);
  Rng rng(31);
  Image im = random_image(rng, 8, 3);
  Image zero_cue = Image::zeros(8, 8, 3);
  Image strong_cue = Image::zeros(8, 8, 3);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c)
        strong_cue.at(y, x, c) = 0.4 * std::sin(2.0 * y + 3.0 * x);

  // identical image for both classes: only the cue separates them
  SgdMomentum opt(0.1, 0.9);
  double first_loss = 0.0, last_loss = 0.0;
  for (int step = 0; step < 150; ++step) {
    Tape t;
    Bound bd(t, net.params());
    Var l0 = t.softmax_xent(net.logits_on(bd, net.feature_on(bd, im, zero_cue)), {0});
    Var l1 = t.softmax_xent(net.logits_on(bd, net.feature_on(bd, im, strong_cue)), {1});
    Var loss = t.add_weighted({l0, l1}, {0.5, 0.5});
    t.backward(loss);
    opt.step(bd);
    if (step == 0) first_loss = t.val(loss)(0, 0);
    last_loss = t.val(loss)(0, 0);
  }
  CHECK(last_loss < first_loss);
  CHECK(last_loss < 0.2);

  // distinct cues now produce distinct logits
  FASFeature f_zero = net.forward(im, zero_cue);
  FASFeature f_strong = net.forward(im, strong_cue);
  CHECK((f_zero.logits - f_strong.logits).lpNorm<Eigen::Infinity>() > 0.0);
  CHECK(classify(f_strong.logits) > classify(f_zero.logits));

  // swapping two cue positional-embedding rows reassigns token order and
  // changes the output: order-awareness comes from the embedding
  Mat& cue_pos = net.params().get("cue.pos");
  Mat swapped = cue_pos;
  swapped.row(0).swap(swapped.row(3));
  REQUIRE(swapped != cue_pos);
  FASFeature before = net.forward(im, strong_cue);
  cue_pos = swapped;
  FASFeature after = net.forward(im, strong_cue);
  CHECK((before.logits - after.logits).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("spec validation rejects impossible geometries") {
  OaSpec bad = tiny_spec();
  bad.cue_tokens = 5;  // not a square
  CHECK_THROWS(OaNet(bad, 1));
  bad = tiny_spec();
  bad.patch = 3;  // 8 % 3 != 0
  CHECK_THROWS(OaNet(bad, 1));
  bad = tiny_spec();
  bad.cue_tokens = 64;  // grid 8 = image size, ratio 1
  CHECK_THROWS(OaNet(bad, 1));

  OaNet net(tiny_spec(), 2);
  Image im = Image::zeros(8, 8, 3);
  CHECK_THROWS(net.forward_batch({&im}, {}));
}

TEST_SUITE_END();
