#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "focalforge/error.hpp"
#include "focalforge/svblur.hpp"
#include "oracles/oracles.hpp"

using namespace focalforge;

namespace {

ImagePlane random_image(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImagePlane img(h, w, c);
  for (float& v : img.data()) v = u(rng);
  return img;
}

BlurMap random_map(int h, int w, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, static_cast<float>(hi));
  BlurMap m(h, w);
  for (float& v : m.data) v = u(rng);
  return m;
}

DegradeOpts exact_opts(int size = 21) {
  DegradeOpts o;
  o.mode = BlurMode::kExact;
  o.kernel_size = size;
  o.scale_factor = 1;
  return o;
}

double max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
  return m;
}

}  // namespace

TEST(GaussianKernel, DeltaForZeroSigma) {
  const auto k = gaussian_kernel(0.0, 21);
  for (int dy = -10; dy <= 10; ++dy)
    for (int dx = -10; dx <= 10; ++dx) EXPECT_EQ(k.at(dy, dx), dy == 0 && dx == 0 ? 1.0 : 0.0);
  EXPECT_EQ(gaussian_kernel(5e-7, 5).at(0, 0), 1.0);
}

TEST(GaussianKernel, UnitSumAndEightFoldSymmetry) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 15.0);
  for (int i = 0; i < 200; ++i) {
    const auto k = gaussian_kernel(u(rng), 21);
    double s = 0;
    for (double w : k.weights) s += w;
    EXPECT_NEAR(s, 1.0, 1e-12);
    for (int a = -10; a <= 10; ++a)
      for (int b = -10; b <= 10; ++b) {
        ASSERT_EQ(k.at(a, b), k.at(b, a));
        ASSERT_EQ(k.at(a, b), k.at(-a, b));
        ASSERT_EQ(k.at(a, b), k.at(a, -b));
      }
  }
}

TEST(GaussianKernel, CenterWeightMatchesDirectSum) {
  long double total = 0;
  for (int y = -2; y <= 2; ++y)
    for (int x = -2; x <= 2; ++x) total += std::exp(-(x * x + y * y) / 2.0L);
  EXPECT_NEAR(gaussian_kernel(1.0, 5).at(0, 0), static_cast<double>(1.0L / total), 1e-15);
}

TEST(GaussianKernel, RejectsBadArguments) {
  EXPECT_THROW(gaussian_kernel(1.0, 4), ValidationError);
  EXPECT_THROW(gaussian_kernel(-1.0, 5), ValidationError);
}

TEST(KernelLut, BinsCoverRange) {
  KernelLut lut(5.0, 256, 21);
  EXPECT_EQ(lut.bins(), 256);
  EXPECT_EQ(lut.bin(0.0), 0);
  EXPECT_EQ(lut.bin(5.0), 255);
  EXPECT_EQ(lut.bin(50.0), 255);
  const double step = 5.0 / 255.0;
  const auto mid = lut.bracket(10.5 * step);
  EXPECT_EQ(mid.lo, 10);
  EXPECT_NEAR(mid.t, 0.5, 1e-9);
  EXPECT_EQ(lut.bracket(0.0).t, 0.0);
  EXPECT_EQ(lut.bracket(5.0).lo, 254);
  EXPECT_EQ(lut.bracket(9.0).t, 1.0);
  EXPECT_DOUBLE_EQ(lut.bin_sigma(255), 5.0);
}

TEST(VariantBlur, ZeroMapIsBitwiseIdentity) {
  const auto img = random_image(13, 17, 3, 2);
  BlurMap zero(13, 17);
  for (auto mode : {BlurMode::kExact, BlurMode::kLut}) {
    auto o = exact_opts();
    o.mode = mode;
    EXPECT_EQ(variant_blur(img, zero, o), img);
  }
}

TEST(VariantBlur, ConstantMapEqualsSingleKernelConvolution) {
  const auto img = random_image(24, 20, 3, 3);
  const auto got = variant_blur(img, BlurMap(24, 20, 2.0f), exact_opts());
  EXPECT_LE(max_abs_diff(got, oracle::convolve(img, oracle::gaussian(2.0, 21), 21)), 1e-6);
}

TEST(VariantBlur, TwoRegionMatchesBruteForce) {
  const auto img = random_image(8, 8, 3, 4);
  BlurMap m(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) m.at(y, x) = x < 4 ? 1.0f : 3.0f;
  EXPECT_LE(max_abs_diff(variant_blur(img, m, exact_opts()), oracle::variant_blur(img, m, 21)), 1e-6);
}

TEST(VariantBlur, RandomMapsMatchBruteForce) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto img = random_image(19, 23, 3, 10 + s);
    const auto m = random_map(19, 23, 5.0, 20 + s);
    EXPECT_LE(max_abs_diff(variant_blur(img, m, exact_opts(11)), oracle::variant_blur(img, m, 11)), 1e-6);
  }
}

TEST(VariantBlur, ConstantImageConservesEnergy) {
  const ImagePlane img(16, 16, 1, 0.37f);
  const ImagePlane out = variant_blur(img, random_map(16, 16, 5.0, 5), exact_opts());
  for (float v : out.data())
    EXPECT_NEAR(v, 0.37, 1e-6);
}

TEST(VariantBlur, Linear) {
  const auto x = random_image(20, 20, 1, 6), y = random_image(20, 20, 1, 7);
  const auto m = random_map(20, 20, 5.0, 8);
  ImagePlane mix(20, 20, 1);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 0.25f * x.data()[i] + 0.5f * y.data()[i];
  const auto bx = variant_blur(x, m, exact_opts()), by = variant_blur(y, m, exact_opts());
  const auto bm = variant_blur(mix, m, exact_opts());
  for (std::size_t i = 0; i < bm.size(); ++i)
    EXPECT_NEAR(bm.data()[i], 0.25 * bx.data()[i] + 0.5 * by.data()[i], 1e-6);
}

TEST(VariantBlur, LutCloseToExact) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto img = random_image(64, 64, 1, 30 + s);
    const auto m = random_map(64, 64, 5.0, 40 + s);
    auto lut = exact_opts();
    lut.mode = BlurMode::kLut;
    EXPECT_LE(max_abs_diff(variant_blur(img, m, lut), variant_blur(img, m, exact_opts())), 1e-2);
  }
}

TEST(VariantBlur, ThreadCountDoesNotChangeBits) {
  const auto img = random_image(57, 41, 3, 9);
  const auto m = random_map(57, 41, 5.0, 10);
  for (auto mode : {BlurMode::kExact, BlurMode::kLut}) {
    auto o = exact_opts();
    o.mode = mode;
    const auto one = variant_blur(img, m, o, 1);
    EXPECT_EQ(variant_blur(img, m, o, 3), one);
    EXPECT_EQ(variant_blur(img, m, o, 8), one);
  }
}

TEST(VariantBlur, SizeMismatchThrows) {
  EXPECT_THROW(variant_blur(ImagePlane(4, 4, 1), BlurMap(4, 5), exact_opts()), ValidationError);
}

TEST(Decimate, IndexArithmetic) {
  ImagePlane ramp(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(y, x) = static_cast<float>(y * 8 + x) / 64.0f;
  const auto d = decimate(ramp, 2, 0);
  ASSERT_EQ(d.height(), 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(d.at(i, j), ramp.at(2 * i, 2 * j));
  const auto o = decimate(ramp, 3, 1);
  ASSERT_EQ(o.height(), 2);  // floor((8 - 1) / 3)
  EXPECT_EQ(o.at(1, 1), ramp.at(4, 4));
  EXPECT_EQ(decimate(ramp, 1), ramp);
  EXPECT_EQ(decimate(ImagePlane(16, 16, 3), 4).width(), 4);
  EXPECT_THROW(decimate(ramp, 2, 2), ValidationError);
}

TEST(Degrade, DegenerateCaseIsIdentity) {
  const auto img = random_image(9, 9, 3, 11);
  auto o = exact_opts();
  EXPECT_EQ(degrade(img, BlurMap(9, 9), o, 1), img);
}

TEST(Degrade, NoiseFreeEqualsComposition) {
  const auto img = random_image(16, 16, 3, 12);
  BlurMap m(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) m.at(y, x) = y < 8 ? 0.5f : 2.5f;
  auto o = exact_opts();
  o.scale_factor = 4;
  const auto got = degrade(img, m, o, 5);
  EXPECT_EQ(got, degrade(img, m, o, 6));
  EXPECT_EQ(got, decimate(variant_blur(img, m, o), 4));
  const auto ref = decimate(oracle::variant_blur(img, m, 21), 4);
  EXPECT_LE(max_abs_diff(got, ref), 1e-6);
}

TEST(Degrade, NoiseIsSeededAndClamped) {
  const auto img = random_image(16, 16, 1, 13);
  auto o = exact_opts();
  o.noise_sigma = 0.5;
  const auto a = degrade(img, BlurMap(16, 16), o, 7);
  EXPECT_EQ(a, degrade(img, BlurMap(16, 16), o, 7));
  EXPECT_NE(a, degrade(img, BlurMap(16, 16), o, 8));
  for (float v : a.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(DegradeOpts, Validation) {
  DegradeOpts o;
  o.kernel_size = 20;
  EXPECT_THROW(o.validate(), ValidationError);
  o = {};
  o.lut_bins = 1;
  EXPECT_THROW(o.validate(), ValidationError);
  o = {};
  o.scale_factor = 0;
  EXPECT_THROW(o.validate(), ValidationError);
}
