#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "focalforge/autodiff/gradcheck.hpp"
#include "focalforge/error.hpp"
#include "focalforge/gia.hpp"
#include "oracles/oracles.hpp"

using namespace focalforge;
using namespace focalforge::ad;

namespace {

Var rand_var(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = u(rng);
  return Var(std::move(t), true);
}

void set(const ParameterSet& ps, const std::string& name, double v) {
  Var p = ps.get(name);
  p.mutable_value().fill(v);
}

void randomize(const ParameterSet& ps, const std::string& name, std::uint64_t seed, double scale) {
  Var p = ps.get(name);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : p.mutable_value().values()) v = u(rng);
}

GiaConfig small_cfg(std::int64_t c = 4, int groups = 2, int window = 8) {
  GiaConfig cfg;
  cfg.channels = c;
  cfg.channel_groups = groups;
  cfg.window = window;
  return cfg;
}

double at4(const Tensor& t, std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
  return t[((n * t.dim(1) + c) * t.dim(2) + y) * t.dim(3) + x];
}

bool all_zero(const Tensor& t) {
  for (double v : t.values())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST(GiaConfig, Validation) {
  GiaConfig c = small_cfg(6, 4);
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(squash_from_string("sigmoid"), Squash::kSigmoid);
  EXPECT_THROW(squash_from_string("tanh"), ValidationError);
}

TEST(GiaParams, CouplingsStartAtZero) {
  ParameterSet ps(1);
  const Gia g = Gia::create(ps, "g", small_cfg());
  EXPECT_EQ(g.alpha().value()[0], 0.0);
  EXPECT_EQ(g.beta().value()[0], 0.0);
  EXPECT_TRUE(all_zero(g.flow_conv().w.value()));
  EXPECT_NE(ps.find("g.in2.mlp_a.w"), nullptr);
  EXPECT_EQ(ps.get("g.in1.mlp_a.w").shape(), (Shape{4, 4}));
  EXPECT_EQ(ps.get("g.in1.m_a.w").shape(), (Shape{1, 64, 1, 1}));
}

TEST(FeatureGroupInteraction, IdentityGramAndOracle) {
  Tensor eye({1, 3, 3});
  eye[0] = eye[4] = eye[8] = 1;
  Var g2 = rand_var({1, 3, 3}, 2);
  const Tensor f = feature_group_interaction(Var(eye), g2).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(f[i * 3 + j], g2.value()[j * 3 + i]);
  Var a = rand_var({2, 4, 3}, 3);
  const Tensor gram = feature_group_interaction(a, a).value();
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) EXPECT_EQ(gram[b * 16 + i * 4 + j], gram[b * 16 + j * 4 + i]);
  Var c = rand_var({1, 4, 3}, 4);
  std::vector<double> av(a.value().data(), a.value().data() + 12), ct(12);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) ct[static_cast<std::size_t>(d * 4 + i)] = c.value()[i * 3 + d];
  const auto ref = oracle::matmul(av, ct, 4, 3, 4);
  const Tensor got = feature_group_interaction(Var(a.value().reshaped({2, 4, 3})), Var(Tensor({2, 4, 3}))).value();
  EXPECT_EQ(got.shape(), (Shape{2, 4, 4}));
  Var a0(Tensor({1, 4, 3}, av));
  const Tensor f0 = feature_group_interaction(a0, c).value();
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(f0[i], ref[static_cast<std::size_t>(i)], 1e-12);
}

TEST(Windows, PartitionRestoreRoundTrip) {
  Var x = rand_var({2, 3, 8, 12}, 5);
  const Var w = window_partition(x, 4);
  EXPECT_EQ(w.shape(), (Shape{2 * 2 * 3, 3, 4, 4}));
  // Window (n=1, row 1, col 2), channel 2, pixel (3, 1).
  EXPECT_EQ(at4(w.value(), 1 * 6 + 1 * 3 + 2, 2, 3, 1), at4(x.value(), 1, 2, 4 + 3, 8 + 1));
  EXPECT_EQ(window_restore(w, 2, 8, 12, 4).value().storage(), x.value().storage());
  EXPECT_THROW(window_partition(x, 5), ValidationError);
}

TEST(Spatial, MaMatchesStepwiseOracle) {
  ParameterSet ps(7);
  const Gia g = Gia::create(ps, "g", small_cfg(4, 2, 8));
  Var f1 = rand_var({1, 4, 8, 8}, 8), f2 = rand_var({1, 4, 8, 8}, 9);
  GiaTrace tr;
  g.spatial(f1, f2, &tr);

  // conv_in -> group_proj -> groups G[n][d].
  std::vector<std::vector<double>> groups[2];
  const Var* in[2] = {&f1, &f2};
  for (int b = 0; b < 2; ++b) {
    const GiaBranch& br = g.branch(b);
    const Tensor conv = oracle::conv2d(in[b]->value(), br.conv_in.w.value(), &br.conv_in.b.value(), 1, 1);
    const Tensor proj = oracle::conv2d(conv, br.group_proj.w.value(), &br.group_proj.b.value(), 1, 0);
    groups[b].assign(64, std::vector<double>(4));
    for (int p = 0; p < 64; ++p)
      for (int d = 0; d < 4; ++d) groups[b][static_cast<std::size_t>(p)][static_cast<std::size_t>(d)] = at4(proj, 0, d, p / 8, p % 8);
  }
  // Gram matrix between pixels of the two inputs.
  std::vector<double> fuse(64 * 64, 0.0);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      for (int d = 0; d < 4; ++d) fuse[static_cast<std::size_t>(i * 64 + j)] += groups[0][i][d] * groups[1][j][d];
  // Input 1 pixel i sees row i; input 2 pixel j sees column j; then the 1x1 conv.
  for (int b = 0; b < 2; ++b) {
    const Tensor& w = g.branch(b).m_a.w.value();
    const double bias = g.branch(b).m_a.b.value()[0];
    for (int p = 0; p < 64; ++p) {
      double s = bias;
      for (int q = 0; q < 64; ++q) s += w[q] * (b == 0 ? fuse[static_cast<std::size_t>(p * 64 + q)] : fuse[static_cast<std::size_t>(q * 64 + p)]);
      EXPECT_NEAR(at4(tr.m_a[b].value(), 0, 0, p / 8, p % 8), s, 1e-10) << "branch " << b << " pixel " << p;
    }
  }
}

TEST(Channel, AaMatchesStepwiseOracle) {
  ParameterSet ps(11);
  const Gia g = Gia::create(ps, "g", small_cfg(6, 3, 4));
  Var f1 = rand_var({2, 6, 5, 7}, 12), f2 = rand_var({2, 6, 5, 7}, 13);
  GiaTrace tr;
  g.channel(f1, f2, &tr);
  const Var* in[2] = {&f1, &f2};
  for (int n = 0; n < 2; ++n) {
    std::vector<double> ao[2];
    for (int b = 0; b < 2; ++b) {
      std::vector<double> gap(6, 0.0);
      for (int c = 0; c < 6; ++c) {
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 7; ++x) gap[static_cast<std::size_t>(c)] += at4(in[b]->value(), n, c, y, x);
        gap[static_cast<std::size_t>(c)] /= 35.0;
      }
      const Affine& m = g.branch(b).mlp_o;
      ao[b].assign(6, 0.0);
      for (int o = 0; o < 6; ++o) {
        double s = m.b.value()[o];
        for (int c = 0; c < 6; ++c) s += m.w.value()[o * 6 + c] * gap[static_cast<std::size_t>(c)];
        ao[b][static_cast<std::size_t>(o)] = s;
        EXPECT_NEAR(tr.a_o[b].value()[n * 6 + o], s, 1e-12);
      }
    }
    // Three groups of two channels, Gram matrix flattened row-major.
    std::vector<double> flat(9, 0.0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 2; ++k) flat[static_cast<std::size_t>(i * 3 + j)] += ao[0][static_cast<std::size_t>(i * 2 + k)] * ao[1][static_cast<std::size_t>(j * 2 + k)];
    for (int b = 0; b < 2; ++b) {
      const Affine& m = g.branch(b).mlp_a;
      for (int o = 0; o < 6; ++o) {
        double s = m.b.value()[o];
        for (int q = 0; q < 9; ++q) s += m.w.value()[o * 9 + q] * flat[static_cast<std::size_t>(q)];
        EXPECT_NEAR(tr.a_a[b].value()[n * 6 + o], s, 1e-12);
      }
    }
  }
}

TEST(Channel, ConstantInputPoolsToConstant) {
  ParameterSet ps(1);
  const Gia g = Gia::create(ps, "g", small_cfg());
  Var f(Tensor({1, 4, 3, 3}, 0.5), true);
  GiaTrace tr;
  g.channel(f, f, &tr);
  const Affine& m = g.branch(0).mlp_o;
  for (int o = 0; o < 4; ++o) {
    double s = m.b.value()[o];
    for (int c = 0; c < 4; ++c) s += m.w.value()[o * 4 + c] * 0.5;
    EXPECT_NEAR(tr.a_o[0].value()[o], s, 1e-15);
  }
}

TEST(Spatial, AlphaZeroGivesOwnGateOnly) {
  ParameterSet ps(3);
  const Gia g = Gia::create(ps, "g", small_cfg(4, 2, 4));
  Var f1 = rand_var({1, 4, 8, 8}, 14), f2 = rand_var({1, 4, 8, 8}, 15), f2b = rand_var({1, 4, 8, 8}, 16);
  const auto a = g.spatial(f1, f2), b = g.spatial(f1, f2b);
  EXPECT_EQ(a.first.value().storage(), b.first.value().storage());
  EXPECT_NE(a.second.value().storage(), b.second.value().storage());
}

TEST(Channel, BetaZeroGivesIndependentAttention) {
  ParameterSet ps(3);
  const Gia g = Gia::create(ps, "g", small_cfg());
  Var f1 = rand_var({1, 4, 5, 5}, 17), f2 = rand_var({1, 4, 5, 5}, 18), f2b = rand_var({1, 4, 5, 5}, 19);
  EXPECT_EQ(g.channel(f1, f2).first.value().storage(), g.channel(f1, f2b).first.value().storage());
}

TEST(Spatial, SwappingInputsAndWeightsSwapsOutputs) {
  const auto cfg = small_cfg(4, 2, 4);
  ParameterSet pa(21), pb(22);
  const Gia a = Gia::create(pa, "g", cfg), b = Gia::create(pb, "g", cfg);
  for (const auto& p : pa.params()) {
    std::string other = p.name;
    if (other.find(".in1.") != std::string::npos)
      other.replace(other.find(".in1."), 5, ".in2.");
    else if (other.find(".in2.") != std::string::npos)
      other.replace(other.find(".in2."), 5, ".in1.");
    Var dst = pb.get(other);
    dst.mutable_value() = p.var.value();
  }
  set(pa, "g.alpha", 0.7);
  set(pb, "g.alpha", 0.7);
  Var f1 = rand_var({1, 4, 8, 8}, 23), f2 = rand_var({1, 4, 8, 8}, 24);
  const auto x = a.spatial(f1, f2), y = b.spatial(f2, f1);
  for (std::int64_t i = 0; i < x.first.value().numel(); ++i) {
    EXPECT_NEAR(x.first.value()[i], y.second.value()[i], 1e-12);
    EXPECT_NEAR(x.second.value()[i], y.first.value()[i], 1e-12);
  }
}

TEST(FlowAlign, ZeroWeightsArePlainUpsampling) {
  ParameterSet ps(2);
  const Gia g = Gia::create(ps, "g", small_cfg());
  Var hi = rand_var({1, 4, 8, 8}, 25), lo = rand_var({1, 4, 4, 4}, 26);
  EXPECT_EQ(g.flow_align(hi, lo).value().storage(), bilinear_resize(lo, 8, 8).value().storage());
  Var same = rand_var({1, 4, 8, 8}, 27);
  EXPECT_EQ(g.flow_align(hi, same).value().storage(), same.value().storage());
  auto cfg = small_cfg();
  cfg.use_flow_align = false;
  ParameterSet ps2(2);
  const Gia plain = Gia::create(ps2, "g", cfg);
  EXPECT_EQ(ps2.find("g.flow.w"), nullptr);
  EXPECT_EQ(plain.flow_align(hi, lo).value().storage(), bilinear_resize(lo, 8, 8).value().storage());
}

TEST(FlowAlign, MatchesUpsampleThenWarpOracle) {
  ParameterSet ps(4);
  const Gia g = Gia::create(ps, "g", small_cfg(2, 1, 4));
  randomize(ps, "g.flow.w", 28, 0.5);
  randomize(ps, "g.flow.b", 29, 0.5);
  Var hi = rand_var({1, 2, 6, 6}, 30), lo = rand_var({1, 2, 3, 3}, 31);
  // Upsample by hand, concat, convolve, then sample.
  Tensor up({1, 2, 6, 6});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        up[(c * 6 + i) * 6 + j] = oracle::bilinear(lo.value().data() + c * 9, 3, 3, (i + 0.5) * 0.5 - 0.5, (j + 0.5) * 0.5 - 0.5);
  Tensor cat({1, 4, 6, 6});
  for (int i = 0; i < 72; ++i) {
    cat[i] = hi.value()[i];
    cat[72 + i] = up[i];
  }
  const Tensor flow = oracle::conv2d(cat, g.flow_conv().w.value(), &g.flow_conv().b.value(), 1, 1);
  const Tensor got = g.flow_align(hi, lo).value();
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const double dx = flow[i * 6 + j], dy = flow[36 + i * 6 + j];
        EXPECT_NEAR(got[(c * 6 + i) * 6 + j], oracle::bilinear(up.data() + c * 36, 6, 6, i + dy, j + dx), 1e-12);
      }
}

TEST(Gia, ShapesFollowFirstInputIncludingPadding) {
  ParameterSet ps(5);
  const Gia g = Gia::create(ps, "g", small_cfg(4, 2, 4));
  Var f1 = rand_var({2, 4, 10, 6}, 32), f2 = rand_var({2, 4, 5, 3}, 33);
  const auto [a, b] = g.forward(f1, f2);
  EXPECT_EQ(a.shape(), f1.shape());
  EXPECT_EQ(b.shape(), f1.shape());
  EXPECT_THROW(g.forward(f1, rand_var({2, 3, 5, 3}, 34)), ValidationError);
  EXPECT_THROW(g.forward(f2, f1), ValidationError);
}

TEST(Gia, DecoupledLimitHasZeroCrossJacobian) {
  ParameterSet ps(6);
  const Gia g = Gia::create(ps, "g", small_cfg(4, 2, 4));
  Var f1 = rand_var({1, 4, 8, 8}, 35), f2 = rand_var({1, 4, 4, 4}, 36);
  for (int out = 0; out < 2; ++out) {
    f1.zero_grad();
    f2.zero_grad();
    const auto o = g.forward(f1, f2);
    const Var& y = out == 0 ? o.first : o.second;
    Tensor probe(y.shape());
    std::mt19937_64 rng(37);
    for (double& v : probe.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    backward(y, probe);
    EXPECT_TRUE(all_zero((out == 0 ? f2 : f1).grad())) << "output " << out;
    EXPECT_FALSE(all_zero((out == 0 ? f1 : f2).grad()));
  }
}

TEST(Gia, GradientsMatchFiniteDifferences) {
  ParameterSet ps(8);
  const Gia g = Gia::create(ps, "g", small_cfg(2, 1, 8));
  set(ps, "g.alpha", 0.4);
  set(ps, "g.beta", -0.3);
  randomize(ps, "g.flow.w", 38, 0.3);
  randomize(ps, "g.flow.b", 39, 0.3);
  Var f1 = rand_var({2, 2, 16, 16}, 40), f2 = rand_var({2, 2, 8, 8}, 41);
  std::vector<GradcheckInput> in = {{"f1", f1}, {"f2", f2}};
  for (const auto& p : ps.params()) in.push_back({p.name, p.var});
  GradcheckOptions opts;
  opts.eps = 1e-4;
  opts.retry_steps = {1e-5, 1e-6, 1e-3};
  opts.max_elements = 16;
  const auto report = gradcheck([&] { auto [a, b] = g.forward(f1, f2); return concat({a, b}, 1); }, in, opts);
  for (const auto& e : report.entries) {
    EXPECT_TRUE(e.passed) << e.name << " rel " << e.max_rel_error;
    EXPECT_GT(e.checked, 0) << e.name;
  }
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Gia, SigmoidSquashBoundsGates) {
  auto cfg = small_cfg(4, 2, 4);
  cfg.attn_squash = Squash::kSigmoid;
  ParameterSet ps(9);
  const Gia g = Gia::create(ps, "g", cfg);
  Var f(Tensor({1, 4, 4, 4}, 1.0), true);
  const auto [a, b] = g.channel(f, f);
  for (double v : a.value().values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}
