#include <gtest/gtest.h>

#include "chatcam/nn/adam.hpp"
#include "chatcam/nn/checkpoint.hpp"
#include "chatcam/nn/layers.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace chatcam;
using namespace chatcam::nn;
using M = Mat<double>;

namespace {

M random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  M m(r, c);
  fill_normal(m, rng, 1.0);
  return m;
}

}  // namespace

TEST(Layers, LinearGradient) {
  Rng rng(1);
  Linear<double> lin(5, 3);
  lin.init(rng, 0.5);
  fill_normal(lin.bias.value, rng, 0.3);
  Param<double> x(4, 5);
  x.value = random_mat(rng, 4, 5);
  const M proj = random_mat(rng, 4, 3);
  NamedParams<double> ps;
  lin.collect(ps, "lin");
  ps.emplace_back("x", &x);
  const auto rep = test::gradcheck<double>(ps, [&](bool acc) {
    const M y = lin.forward(x.value);
    if (acc) x.grad += lin.backward(x.value, proj);
    return y.cwiseProduct(proj).sum();
  });
  EXPECT_LT(rep.max_rel_err, 1e-7) << rep.worst;
}

TEST(Layers, ConvGradientStrided) {
  Rng rng(2);
  for (int stride : {1, 2}) {
    Conv1d<double> conv(3, 4, 3, stride, 1);
    conv.init(rng);
    fill_normal(conv.bias.value, rng, 0.3);
    Param<double> x(8, 3);
    x.value = random_mat(rng, 8, 3);
    const M proj = random_mat(rng, conv.out_length(8), 4);
    NamedParams<double> ps;
    conv.collect(ps, "conv");
    ps.emplace_back("x", &x);
    const auto rep = test::gradcheck<double>(ps, [&](bool acc) {
      const M y = conv.forward(x.value);
      if (acc) x.grad += conv.backward(x.value, proj);
      return y.cwiseProduct(proj).sum();
    });
    EXPECT_LT(rep.max_rel_err, 1e-7) << rep.worst;
    EXPECT_EQ(conv.out_length(8), stride == 1 ? 8 : 4);
  }
}

TEST(Layers, ConvMatchesDirectSum) {
  Rng rng(3);
  Conv1d<double> conv(2, 3, 3, 2, 1);
  conv.init(rng);
  const M x = random_mat(rng, 6, 2);
  const M y = conv.forward(x);
  for (Eigen::Index t = 0; t < y.rows(); ++t)
    for (int o = 0; o < 3; ++o) {
      double s = conv.bias.value(0, o);
      for (int j = 0; j < 3; ++j) {
        const Eigen::Index src = t * 2 - 1 + j;
        if (src < 0 || src >= 6) continue;
        for (int c = 0; c < 2; ++c) s += x(src, c) * conv.weight.value(j * 2 + c, o);
      }
      EXPECT_NEAR(y(t, o), s, 1e-13);
    }
}

TEST(Layers, LayerNormGeluUpsampleGradients) {
  Rng rng(4);
  LayerNorm<double> ln(6);
  fill_normal(ln.gain.value, rng, 1.0);
  fill_normal(ln.shift.value, rng, 1.0);
  Param<double> x(3, 6);
  x.value = random_mat(rng, 3, 6);
  const M proj = random_mat(rng, 6, 6);
  NamedParams<double> ps;
  ln.collect(ps, "ln");
  ps.emplace_back("x", &x);
  const auto rep = test::gradcheck<double>(ps, [&](bool acc) {
    LayerNormCache<double> c;
    const M a = ln.forward(x.value, &c);
    const M g = gelu<double>(a);
    const M u = upsample_rows<double>(g, 2);
    if (acc) {
      const M du = upsample_rows_backward<double>(proj, 2);
      x.grad += ln.backward(c, gelu_backward<double>(a, du));
    }
    return u.cwiseProduct(proj).sum();
  });
  EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
}

TEST(Layers, SoftmaxRowsSumToOne) {
  Rng rng(5);
  const M p = softmax_rows<double>(random_mat(rng, 7, 11) * 30.0);
  for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
}

TEST(Adam, MatchesHandComputedSteps) {
  Param<double> w(1, 2);
  w.value << 1.0, -2.0;
  NamedParams<double> ps{{"w", &w}};
  Adam<double> opt(ps, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    const double g[2] = {0.5 * t, -1.5};
    w.grad << g[0], g[1];
    opt.step();
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w.value(0, i), ref[i], 1e-12);
    }
  }
}

TEST(Adam, ClipsGlobalNorm) {
  Param<double> w(1, 1);
  NamedParams<double> ps{{"w", &w}};
  Adam<double> clipped(ps, AdamConfig{1.0, 0.0, 0.0, 0.0, 1.0});
  w.grad(0, 0) = 100.0;
  EXPECT_DOUBLE_EQ(clipped.grad_norm(), 100.0);
  clipped.step();
  // beta=0 Adam step is lr*sign(g) regardless of clipping.
  EXPECT_NEAR(w.value(0, 0), -1.0, 1e-12);
}

TEST(Checkpoint, RoundTripBitExact) {
  Rng rng(6);
  Checkpoint ck;
  ck.meta = {{"kind", "x"}, {"n", 3}};
  Mat<float> a(3, 4);
  fill_normal(a, rng, 1.0);
  M b = random_mat(rng, 2, 5);
  ck.put("a", a);
  ck.put("b", b);
  const Checkpoint back = Checkpoint::deserialize(ck.serialize());
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_EQ(back.get<float>("a"), a);
  EXPECT_EQ(back.get<double>("b"), b);
  EXPECT_EQ(back.serialize(), ck.serialize());
  EXPECT_EQ(back.get<double>("a"), a.cast<double>());
  expect_error(ErrorCode::FormatError, [&] { back.get<double>("missing"); });
  expect_error(ErrorCode::FormatError, [] { Checkpoint::deserialize("not a checkpoint at all"); });
  std::string truncated = ck.serialize();
  truncated.resize(truncated.size() - 3);
  expect_error(ErrorCode::FormatError, [&] { Checkpoint::deserialize(truncated); });
}
