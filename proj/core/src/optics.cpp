#include "focalforge/optics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "focalforge/error.hpp"

namespace focalforge {

void LensParams::validate() const {
  if (!(focal_length_mm > 0.0)) throw ValidationError("lens.focal_length must be > 0");
  if (!(aperture_mm > 0.0)) throw ValidationError("lens.aperture_diameter must be > 0");
  if (!(focus_distance_m > focal_length_mm / 1000.0))
    throw ValidationError("lens.focus_distance must exceed the focal length");
  if (!(pixels_per_mm > 0.0)) throw ValidationError("lens.pixels_per_mm must be > 0");
  if (!(coc_to_sigma >= 0.0)) throw ValidationError("lens.coc_to_sigma must be >= 0");
  if (!(sigma_max > 0.0)) throw ValidationError("lens.sigma_max must be > 0");
}

double coc_diameter_mm(const LensParams& lens, double depth_m) {
  // Depths in meters, lens dimensions in mm; the 1000 folds in the unit change.
  const double zf = lens.focus_distance_m;
  return lens.aperture_mm * lens.focal_length_mm * std::abs(depth_m - zf) /
         (depth_m * (zf * 1000.0 - lens.focal_length_mm));
}

double coc_sigma(const LensParams& lens, double depth_m) {
  return lens.coc_to_sigma * coc_diameter_mm(lens, depth_m) * lens.pixels_per_mm;
}

BlurMap coc_sigma_map(const DepthMap& depth, const LensParams& lens) {
  lens.validate();
  validate(depth);
  BlurMap out(depth.height, depth.width);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    const double s = coc_sigma(lens, depth.data[i]);
    out.data[i] = static_cast<float>(std::clamp(s, 0.0, lens.sigma_max));
  }
  return out;
}

BlurMap invariant_sigma_map(int height, int width, double sigma, double sigma_max) {
  if (!(sigma >= 0.0) || sigma > sigma_max) {
    std::ostringstream os;
    os << "invariant_sigma_map: sigma " << sigma << " outside [0, " << sigma_max << "]";
    throw ValidationError(os.str());
  }
  return BlurMap(height, width, static_cast<float>(sigma));
}

double sample_focus_distance(const DepthMap& depth, std::uint64_t seed) {
  validate(depth);
  std::vector<float> v = depth.data;
  const auto pick = [&v](double q) {
    const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return static_cast<double>(v[k]);
  };
  const double lo = pick(0.05);
  const double hi = pick(0.95);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  return hi > lo ? u(rng) : lo;
}

}  // namespace focalforge
