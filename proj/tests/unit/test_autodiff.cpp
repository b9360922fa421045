#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "focalforge/autodiff/checkpoint.hpp"
#include "focalforge/autodiff/gradcheck.hpp"
#include "focalforge/autodiff/nn.hpp"
#include "focalforge/autodiff/ops.hpp"
#include "focalforge/autodiff/optim.hpp"
#include "focalforge/error.hpp"
#include "oracles/oracles.hpp"

namespace fs = std::filesystem;
using namespace focalforge;
using namespace focalforge::ad;

namespace {

Var rand_var(Shape s, std::uint64_t seed, double lo = -1, double hi = 1, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = u(rng);
  return Var(std::move(t), grad);
}

// Values well away from zero so relu and |x| are smooth under the probe step.
Var rand_away_from_zero(Shape s, std::uint64_t seed) {
  Var v = rand_var(std::move(s), seed);
  for (double& x : v.mutable_value().values()) x = (x < 0 ? -0.2 : 0.2) + 0.8 * x;
  return v;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

void expect_fd(const std::function<Var()>& f, const std::vector<Var>& in, double tol = 1e-4) {
  const auto r = oracle::finite_difference(f, in, 17, 1e-6);
  EXPECT_GT(r.checked, 0);
  EXPECT_LT(r.max_rel, tol);
}

}  // namespace

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ValidationError);
  EXPECT_THROW(Tensor({2}).reshaped({3}), ValidationError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3);
}

TEST(Graph, GradientsOnlyWhereRequested) {
  Var a = rand_var({3}, 1), b = rand_var({3}, 2, -1, 1, false);
  Var y = sum(mul(a, b));
  backward(y);
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
  expect_close(a.grad(), b.value(), 0);
  EXPECT_FALSE(sum(mul(b, b)).requires_grad());
}

TEST(Graph, SharedSubexpressionAccumulates) {
  Var x(Tensor({1}, std::vector<double>{3.0}), true);
  Var y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Elementwise, BroadcastValuesAndGradients) {
  Var a = rand_var({2, 3, 4}, 3), b = rand_var({3, 1}, 4);
  const Tensor s = add(a, b).value();
  EXPECT_EQ(s.shape(), (Shape{2, 3, 4}));
  EXPECT_DOUBLE_EQ(s[1 * 12 + 2 * 4 + 3], a.value()[1 * 12 + 2 * 4 + 3] + b.value()[2]);
  expect_fd([&] { return add(a, b); }, {a, b});
  expect_fd([&] { return sub(a, b); }, {a, b});
  expect_fd([&] { return mul(a, b); }, {a, b});
  expect_fd([&] { return scale(a, -2.5); }, {a});
  EXPECT_THROW(add(rand_var({2, 3}, 1), rand_var({4}, 2)), ValidationError);
}

TEST(Elementwise, NonlinearitiesAndReductions) {
  Var a = rand_away_from_zero({3, 5}, 5);
  expect_fd([&] { return relu(a); }, {a});
  expect_fd([&] { return sigmoid(a); }, {a});
  expect_fd([&] { return sum(a); }, {a});
  expect_fd([&] { return mean(a); }, {a});
  EXPECT_EQ(relu(Var(Tensor({2}, std::vector<double>{-1, 2}))).value()[0], 0.0);
}

TEST(Conv2d, MatchesDirectLoopWithStrideAndPad) {
  Var x = rand_var({2, 3, 7, 6}, 6), w = rand_var({4, 3, 3, 3}, 7), b = rand_var({4}, 8);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      const Tensor ref = oracle::conv2d(x.value(), w.value(), &b.value(), stride, pad);
      expect_close(conv2d(x, w, b, stride, pad).value(), ref, 1e-12);
    }
  Var w1 = rand_var({5, 3, 1, 1}, 9);
  expect_close(conv2d(x, w1, Var()).value(), oracle::conv2d(x.value(), w1.value(), nullptr, 1, 0), 1e-12);
}

TEST(Conv2d, IdentityKernels) {
  Var x = rand_var({1, 2, 5, 5}, 10);
  Tensor id1({2, 2, 1, 1});
  id1[0] = id1[3] = 1.0;
  expect_close(conv2d(x, Var(id1), Var()).value(), x.value(), 0);
  Tensor delta({2, 2, 3, 3});
  delta[(0 * 2 + 0) * 9 + 4] = delta[(1 * 2 + 1) * 9 + 4] = 1.0;
  expect_close(conv2d(x, Var(delta), Var(), 1, 1).value(), x.value(), 0);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Var x = rand_var({1, 2, 5, 5}, 11), w = rand_var({3, 2, 3, 3}, 12), b = rand_var({3}, 13);
  expect_fd([&] { return conv2d(x, w, b, 1, 1); }, {x, w, b});
  expect_fd([&] { return conv2d(x, w, b, 2, 1); }, {x, w, b});
  Var w1 = rand_var({3, 2, 1, 1}, 14);
  expect_fd([&] { return conv2d(x, w1, b); }, {x, w1, b});
}

TEST(Matmul, TripleLoopAndIdentity) {
  Tensor a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(Var(a), Var(b)).value();
  const auto ref = oracle::matmul(a.storage(), b.storage(), 2, 3, 2);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(c[i], ref[static_cast<std::size_t>(i)]);
  EXPECT_EQ(c[0], 58.0);
  Tensor eye({3, 3});
  eye[0] = eye[4] = eye[8] = 1.0;
  Var g = rand_var({3, 4}, 15);
  expect_close(matmul(Var(eye), g).value(), g.value(), 0);
}

TEST(Matmul, BatchedBroadcastAndGradients) {
  Var a = rand_var({2, 4, 3}, 16), b = rand_var({3, 4}, 17);
  const Tensor c = matmul(a, b).value();
  ASSERT_EQ(c.shape(), (Shape{2, 4, 4}));
  std::vector<double> a1(a.value().data() + 12, a.value().data() + 24);
  const auto ref = oracle::matmul(a1, std::vector<double>(b.value().data(), b.value().data() + 12), 4, 3, 4);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(c[16 + i], ref[static_cast<std::size_t>(i)], 1e-12);
  Var p = rand_var({4, 3}, 18), q = rand_var({3, 4}, 19);
  expect_fd([&] { return matmul(p, q); }, {p, q});
  expect_fd([&] { return matmul(a, b); }, {a, b});
}

TEST(Affine, EqualsMatmulWithTransposeAndBias) {
  Var x = rand_var({3, 4}, 20), w = rand_var({2, 4}, 21), b = rand_var({2}, 22);
  const Tensor y = affine(x, w, b).value();
  for (int n = 0; n < 3; ++n)
    for (int o = 0; o < 2; ++o) {
      double s = b.value()[o];
      for (int i = 0; i < 4; ++i) s += x.value()[n * 4 + i] * w.value()[o * 4 + i];
      EXPECT_NEAR(y[n * 2 + o], s, 1e-12);
    }
  expect_fd([&] { return affine(x, w, b); }, {x, w, b});
}

TEST(Pooling, ConstantInputGivesConstant) {
  Var x(Tensor({1, 2, 3, 3}, 0.75), true);
  const Tensor p = global_avg_pool(x).value();
  EXPECT_EQ(p.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(p[1], 0.75);
  Var r = rand_var({2, 3, 4, 5}, 23);
  expect_fd([&] { return global_avg_pool(r); }, {r});
}

TEST(Resample, BilinearResizeMatchesHalfPixelOracle) {
  Var x = rand_var({1, 2, 4, 5}, 24);
  const Tensor y = bilinear_resize(x, 8, 7).value();
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 7; ++j) {
        const double sy = (i + 0.5) * 4.0 / 8.0 - 0.5, sx = (j + 0.5) * 5.0 / 7.0 - 0.5;
        EXPECT_NEAR(y[(c * 8 + i) * 7 + j], oracle::bilinear(x.value().data() + c * 20, 4, 5, sy, sx), 1e-12);
      }
  expect_fd([&] { return bilinear_resize(x, 8, 7); }, {x});
  expect_fd([&] { return bilinear_resize(x, 3, 2); }, {x});
}

TEST(Resample, ZeroFlowIsIdentityOrPlainUpsample) {
  Var x = rand_var({2, 3, 4, 4}, 25);
  Var same(Tensor({2, 2, 4, 4}), true);
  EXPECT_EQ(grid_sample_flow(x, same).value().storage(), x.value().storage());
  Var up(Tensor({2, 2, 8, 8}), true);
  EXPECT_EQ(grid_sample_flow(x, up).value().storage(), bilinear_resize(x, 8, 8).value().storage());
}

TEST(Resample, FlowOffsetsMatchOracle) {
  Var x = rand_var({1, 1, 5, 6}, 26);
  Var flow = rand_var({1, 2, 10, 12}, 27, -1.3, 1.3);
  const Tensor y = grid_sample_flow(x, flow).value();
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 12; ++j) {
      const double dx = flow.value()[i * 12 + j], dy = flow.value()[120 + i * 12 + j];
      const double sy = (i + 0.5) * 0.5 - 0.5 + dy, sx = (j + 0.5) * 0.5 - 0.5 + dx;
      EXPECT_NEAR(y[i * 12 + j], oracle::bilinear(x.value().data(), 5, 6, sy, sx), 1e-12);
    }
}

TEST(Resample, FlowGradientsMatchFiniteDifferences) {
  Var x = rand_var({1, 2, 4, 5}, 28);
  Var flow = rand_var({1, 2, 8, 10}, 29, -0.7, 0.7);
  // Keep sample positions off the integer lattice where bilinear has kinks.
  for (double& v : flow.mutable_value().values()) v = std::round(v * 4) / 4 + 0.11;
  expect_fd([&] { return grid_sample_flow(x, flow); }, {x, flow});
}

TEST(Shape, ConcatReshapePermute) {
  Var a = rand_var({2, 1, 3}, 30), b = rand_var({2, 2, 3}, 31);
  const Tensor c = concat({a, b}, 1).value();
  EXPECT_EQ(c.shape(), (Shape{2, 3, 3}));
  EXPECT_EQ(c[1 * 9 + 2 * 3 + 1], b.value()[1 * 6 + 1 * 3 + 1]);
  expect_fd([&] { return concat({a, b}, 1); }, {a, b});
  EXPECT_EQ(reshape(b, {-1, 3}).shape(), (Shape{4, 3}));
  EXPECT_THROW(reshape(b, {-1, -1}), ValidationError);
  const Tensor p = permute(b, {2, 0, 1}).value();
  EXPECT_EQ(p.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(p[2 * 4 + 1 * 2 + 0], b.value()[1 * 6 + 0 * 3 + 2]);
  expect_fd([&] { return permute(b, {2, 0, 1}); }, {b});
  expect_fd([&] { return reshape(b, {3, 4}); }, {b});
  EXPECT_THROW(permute(b, {0, 0, 1}), ValidationError);
}

TEST(Shape, PadReplicateAndCrop) {
  Var x = rand_var({1, 1, 3, 2}, 32);
  const Tensor p = pad_replicate(x, 1, 2, 0, 1).value();
  EXPECT_EQ(p.shape(), (Shape{1, 1, 6, 3}));
  EXPECT_EQ(p[0], x.value()[0]);
  EXPECT_EQ(p[5 * 3 + 2], x.value()[2 * 2 + 1]);
  expect_close(crop(pad_replicate(x, 1, 2, 0, 1), 1, 0, 3, 2).value(), x.value(), 0);
  expect_fd([&] { return pad_replicate(x, 1, 2, 0, 1); }, {x});
  expect_fd([&] { return crop(x, 1, 0, 2, 2); }, {x});
  EXPECT_THROW(crop(x, 2, 0, 2, 2), ValidationError);
}

TEST(Losses, CrossEntropy) {
  Tensor z({1, 3, 1, 2});
  z[0 * 2 + 0] = 40;  // pixel 0 strongly class 0
  z[2 * 2 + 1] = 40;  // pixel 1 strongly class 2
  std::vector<std::uint8_t> lab = {0, 2};
  EXPECT_LT(softmax_cross_entropy(Var(z), lab).value()[0], 1e-15);
  Var zz = rand_var({2, 3, 2, 2}, 33, -2, 2);
  std::vector<std::uint8_t> l2 = {0, 1, 2, 255, 2, 2, 0, 1};
  // Mean over the seven valid pixels.
  double ref = 0;
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 4; ++p) {
      const int l = l2[static_cast<std::size_t>(n * 4 + p)];
      if (l == 255) continue;
      double m = -1e300, s = 0;
      for (int c = 0; c < 3; ++c) m = std::max(m, zz.value()[(n * 3 + c) * 4 + p]);
      for (int c = 0; c < 3; ++c) s += std::exp(zz.value()[(n * 3 + c) * 4 + p] - m);
      ref += -(zz.value()[(n * 3 + l) * 4 + p] - m - std::log(s));
    }
  EXPECT_NEAR(softmax_cross_entropy(zz, l2).value()[0], ref / 7, 1e-12);
  expect_fd([&] { return softmax_cross_entropy(zz, l2); }, {zz});
  std::vector<std::uint8_t> bad = {0, 1, 7, 0, 0, 0, 0, 0};
  EXPECT_THROW(softmax_cross_entropy(zz, bad), ValidationError);
}

TEST(Losses, L1) {
  Var p = rand_away_from_zero({2, 3}, 34);
  EXPECT_EQ(l1_loss(p, p.value()).value()[0], 0.0);
  Tensor t({2, 3}, 0.0);
  double ref = 0;
  for (double v : p.value().values()) ref += std::abs(v);
  EXPECT_NEAR(l1_loss(p, t).value()[0], ref / 6, 1e-15);
  expect_fd([&] { return l1_loss(p, t); }, {p});
}

TEST(Gradcheck, LibraryCheckerAgreesAndCatchesWrongGradients) {
  Var x = rand_var({3, 4}, 35), w = rand_var({2, 4}, 36), b = rand_var({2}, 37);
  const auto ok = gradcheck([&] { return affine(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
  EXPECT_TRUE(ok.passed);
  EXPECT_LT(ok.max_rel_error, 1e-6);
  // An op whose backward is off by a factor of two must fail.
  auto wrong = [&] {
    return make_node(x.value(), {x}, [xn = x.node()](Node& self) {
      Tensor& g = xn->grad_ref();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * self.grad[i];
    });
  };
  EXPECT_FALSE(gradcheck(wrong, {{"x", x}}).passed);
}

TEST(Params, NamedUniqueAndInitialized) {
  ParameterSet ps(3);
  Conv2d c = Conv2d::create(ps, "c", 2, 4, 3);
  EXPECT_EQ(c.pad, 1);
  EXPECT_EQ(ps.get("c.w").shape(), (Shape{4, 2, 3, 3}));
  const double bound = 1.0 / std::sqrt(18.0);
  for (double v : c.w.value().values()) EXPECT_LE(std::abs(v), bound);
  EXPECT_THROW(Conv2d::create(ps, "c", 2, 4, 3), ValidationError);
  EXPECT_THROW(Conv2d::create(ps, "even", 2, 4, 2), ValidationError);
  ps.create("zeros", {3}, Init::kZeros);
  EXPECT_EQ(ps.get("zeros").value()[2], 0.0);
  EXPECT_EQ(ps.scalar_count(), 4 * 2 * 9 + 4 + 3);
  EXPECT_THROW(ps.get("missing"), ValidationError);
  ParameterSet again(3);
  EXPECT_EQ(Conv2d::create(again, "c", 2, 4, 3).w.value().storage(), c.w.value().storage());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p({3}, std::vector<double>{1, 2, 3}), g({3}, 0.0);
  AdamState st;
  adam_step({&p}, {&g}, st, 0.1);
  EXPECT_EQ(p.storage(), (std::vector<double>{1, 2, 3}));
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Tensor p({3}, 0.0), g({3}, std::vector<double>{0.3, -7.0, 1e-3});
  AdamState st;
  adam_step({&p}, {&g}, st, 0.01);
  EXPECT_NEAR(p[0], -0.01, 1e-8);
  EXPECT_NEAR(p[1], 0.01, 1e-8);
  EXPECT_NEAR(p[2], -0.01, 1e-6);
}

TEST(Adam, QuadraticBowlTracksScalarReference) {
  // f(x) = 0.5 * k * x^2 per coordinate.
  const std::vector<double> k = {1.0, 4.0}, x0 = {2.0, -1.5};
  Var x(Tensor({2}, x0), true);
  Adam opt({x});
  std::vector<double> rx = x0, m(2, 0), v(2, 0);
  double prev = 1e300;
  for (int t = 1; t <= 10; ++t) {
    x.zero_grad();
    Var loss = scale(sum(mul(mul(x, x), Var(Tensor({2}, k)))), 0.5);
    const double l = loss.value()[0];
    EXPECT_LT(l, prev);
    prev = l;
    backward(loss);
    opt.step(0.1);
    for (int i = 0; i < 2; ++i) {
      const double g = k[static_cast<std::size_t>(i)] * rx[static_cast<std::size_t>(i)];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.99 * v[i] + 0.01 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.99, t));
      rx[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(x.value()[i], rx[i], 1e-12);
    }
  }
}

TEST(Schedule, CosineWarmup) {
  EXPECT_EQ(cosine_warmup_lr(10), 1e-4);
  EXPECT_EQ(cosine_warmup_lr(0), 0.0);
  EXPECT_NEAR(cosine_warmup_lr(5), 0.5e-4, 1e-18);
  EXPECT_NEAR(cosine_warmup_lr(10 + 690 / 2.0), 0.5e-4, 1e-15);
  EXPECT_LT(cosine_warmup_lr(699), 1e-8);
  EXPECT_THROW(cosine_warmup_lr(700), ValidationError);
  EXPECT_THROW(cosine_warmup_lr(1, 10, 10), ValidationError);
  double prev = 1;
  for (int e = 10; e < 700; ++e) {
    EXPECT_LE(cosine_warmup_lr(e), prev);
    prev = cosine_warmup_lr(e);
  }
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  const auto dir = fs::temp_directory_path() / "focalforge_test_ckpt";
  fs::create_directories(dir);
  ParameterSet ps(1);
  Conv2d c = Conv2d::create(ps, "layer", 2, 3, 3);
  Adam opt(ps.vars());
  backward(sum(c(rand_var({1, 2, 4, 4}, 40))));
  opt.step(1e-3);
  save_checkpoint(dir / "a.ckpt", ps, {{"hello", 3}}, &opt);

  ParameterSet other(2);
  Conv2d::create(other, "layer", 2, 3, 3);
  const auto loaded = load_checkpoint(dir / "a.ckpt", other);
  EXPECT_EQ(loaded.meta["hello"], 3);
  ASSERT_TRUE(loaded.has_optimizer);
  EXPECT_EQ(loaded.optimizer.step, 1);
  EXPECT_EQ(other.get("layer.w").value().storage(), ps.get("layer.w").value().storage());
  EXPECT_EQ(loaded.optimizer.m[0].storage(), opt.state().m[0].storage());
  EXPECT_EQ(read_checkpoint_meta(dir / "a.ckpt")["hello"], 3);

  ParameterSet wrong_shape(0);
  Conv2d::create(wrong_shape, "layer", 2, 4, 3);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", wrong_shape), std::exception);
  ParameterSet missing(0);
  Conv2d::create(missing, "layer", 2, 3, 3);
  missing.create("extra", {1}, Init::kZeros);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", missing), std::exception);
  EXPECT_THROW(read_tensors(dir / "nope.ckpt"), IoError);
}
