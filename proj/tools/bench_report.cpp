#include "bench_report.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include "focalforge/svblur.hpp"

namespace focalforge::tools {

nlohmann::json run_bench(const BenchOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImagePlane img(opts.height, opts.width, 3);
  for (float& v : img.data()) v = u(rng);
  // Smooth spatially varying sigma field spanning [0, sigma_max].
  BlurMap map(opts.height, opts.width);
  const double fy = 2.0 + 3.0 * u(rng), fx = 2.0 + 3.0 * u(rng);
  for (int y = 0; y < opts.height; ++y)
    for (int x = 0; x < opts.width; ++x) {
      const double s = 0.5 + 0.25 * std::sin(fy * y / opts.height * 6.2832) + 0.25 * std::cos(fx * x / opts.width * 6.2832);
      map.at(y, x) = static_cast<float>(opts.sigma_max * s);
    }

  const double pixels = static_cast<double>(opts.width) * opts.height;
  nlohmann::json runs = nlohmann::json::array();
  double best[2][3] = {};
  const int thread_counts[3] = {1, 2, 4};
  for (int m = 0; m < 2; ++m) {
    DegradeOpts o;
    o.kernel_size = opts.kernel_size;
    o.sigma_max = opts.sigma_max;
    o.mode = m == 0 ? BlurMode::kExact : BlurMode::kLut;
    for (int t = 0; t < 3; ++t) {
      double b = 1e300;
      for (int r = 0; r < opts.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const ImagePlane out = variant_blur(img, map, o, thread_counts[t]);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        b = std::min(b, dt);
        if (out.empty()) return {};
      }
      best[m][t] = b;
      runs.push_back({{"mode", m == 0 ? "exact" : "lut"},
                      {"threads", thread_counts[t]},
                      {"seconds", b},
                      {"pixels_per_second", pixels / b}});
    }
  }
  return {{"width", opts.width},
          {"height", opts.height},
          {"kernel_size", opts.kernel_size},
          {"sigma_max", opts.sigma_max},
          {"repeats", opts.repeats},
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"runs", runs},
          {"lut_over_exact_speedup", best[0][0] / best[1][0]},
          {"lut_thread_speedup", {{"2", best[1][0] / best[1][1]}, {"4", best[1][0] / best[1][2]}}},
          {"exact_thread_speedup", {{"2", best[0][0] / best[0][1]}, {"4", best[0][0] / best[0][2]}}}};
}

}  // namespace focalforge::tools
