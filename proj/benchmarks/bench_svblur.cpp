#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "focalforge/svblur.hpp"

using namespace focalforge;

namespace {

struct Fixture {
  ImagePlane img;
  BlurMap map;
  Fixture(int h, int w) : img(h, w, 3), map(h, w) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : img.data()) v = u(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        map.at(y, x) = static_cast<float>(2.5 + 2.5 * std::sin(0.02 * x) * std::cos(0.03 * y));
  }
};

void BM_VariantBlur(benchmark::State& state) {
  static const Fixture fx(480, 640);
  DegradeOpts o;
  o.kernel_size = 21;
  o.mode = state.range(0) == 0 ? BlurMode::kExact : BlurMode::kLut;
  const int threads = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(variant_blur(fx.img, fx.map, o, threads));
  state.SetItemsProcessed(state.iterations() * 480 * 640);
  state.SetLabel(o.mode == BlurMode::kExact ? "exact" : "lut");
}

void BM_KernelLut(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(KernelLut(5.0, static_cast<int>(state.range(0)), 21));
}

}  // namespace

BENCHMARK(BM_VariantBlur)->ArgsProduct({{0, 1}, {1, 2, 4}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_KernelLut)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
