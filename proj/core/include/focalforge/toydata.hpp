#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "focalforge/datagen.hpp"

namespace focalforge {

/// Synthetic scenes: a far background plane and a near foreground plane of
/// blobs. Each plane carries one of two classes with its own color and
/// texture, so class and depth are correlated.
struct ToySpec {
  int count = 200;
  int hr_size = 384;
  int classes = 4;
  SplitSizes sizes{160, 20, 20};
  std::uint64_t seed = 0;
  DatasetSpec dataset;  // sigma_max, kernel size, scale, invariant fraction
  LensParams lens;      // focus is sampled per image

  ToySpec();
  void validate() const;
};

struct ToyScene {
  ImagePlane rgb;
  DepthMap depth;
  LabelMap labels;
};

ToyScene make_toy_scene(const ToySpec& spec, int index);

// Writes sources to dir/source and the synthesized set to dir (see
// synthesize_dataset). Returns the final manifest entries.
std::vector<ManifestEntry> make_toy_dataset(const ToySpec& spec, const DegradeOpts& opts,
                                            const std::filesystem::path& dir);

}  // namespace focalforge
