#pragma once

#include <cstdint>

#include "focalforge/imageio.hpp"

namespace focalforge {

/// Thin-lens camera used to turn depth into defocus blur.
struct LensParams {
  double focal_length_mm = 50.0;
  double aperture_mm = 25.0;
  // <= 0 in a manifest means "sample per image" (see sample_focus_distance).
  double focus_distance_m = 2.0;
  double pixels_per_mm = 40.0;
  // Gaussian sigma as a fraction of the circle-of-confusion diameter.
  double coc_to_sigma = 0.25;
  double sigma_max = 5.0;

  void validate() const;
};

// Circle-of-confusion diameter in mm for an object at depth_m.
double coc_diameter_mm(const LensParams& lens, double depth_m);

// Unclipped sigma in HR pixels.
double coc_sigma(const LensParams& lens, double depth_m);

// Per-pixel sigma clipped to [0, sigma_max]. Throws ValidationError naming the
// first non-positive depth pixel.
BlurMap coc_sigma_map(const DepthMap& depth, const LensParams& lens);

BlurMap invariant_sigma_map(int height, int width, double sigma, double sigma_max);

// Focus distance drawn uniformly between the 5th and 95th depth percentiles.
double sample_focus_distance(const DepthMap& depth, std::uint64_t seed);

}  // namespace focalforge
