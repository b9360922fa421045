#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

namespace focalforge::tools {

struct BenchOptions {
  int width = 640;
  int height = 480;
  int kernel_size = 21;
  double sigma_max = 5.0;
  int repeats = 3;  // best-of
  std::uint64_t seed = 0;
};

// Times variant_blur in exact and lut mode at 1, 2 and 4 threads.
nlohmann::json run_bench(const BenchOptions& opts);

}  // namespace focalforge::tools
