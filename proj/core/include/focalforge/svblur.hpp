#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "focalforge/imageio.hpp"

namespace focalforge {

/// Odd-sized isotropic Gaussian, normalized to unit sum.
struct Kernel {
  int size = 1;
  std::vector<double> weights;  // size*size, row-major

  double at(int dy, int dx) const {  // offsets from the center
    const int r = size / 2;
    return weights[static_cast<std::size_t>(dy + r) * size + (dx + r)];
  }
};

enum class BlurMode { kExact, kLut };

struct DegradeOpts {
  int scale_factor = 4;
  int kernel_size = 21;
  double noise_sigma = 0.0;
  int lut_bins = 256;
  BlurMode mode = BlurMode::kLut;
  int decimation_offset = 0;
  // Upper end of the LUT sigma range; sigmas above it use the last bin.
  double sigma_max = 5.0;

  void validate() const;
};

// sigma < 1e-6 yields the delta kernel. Throws on even size or negative sigma.
Kernel gaussian_kernel(double sigma, int size);

/// Precomputed kernels on a uniform sigma grid over [0, sigma_max].
class KernelLut {
 public:
  KernelLut(double sigma_max, int bins, int size);

  const Kernel& lookup(double sigma) const { return kernels_[bin(sigma)]; }
  int bin(double sigma) const;
  const Kernel& kernel(int b) const { return kernels_[static_cast<std::size_t>(b)]; }

  // Lower bin of the pair bracketing sigma and the weight of the upper one.
  struct Bracket {
    int lo = 0;
    double t = 0.0;
  };
  Bracket bracket(double sigma) const;
  double bin_sigma(int b) const { return step_ * b; }
  int bins() const { return static_cast<int>(kernels_.size()); }

 private:
  double sigma_max_;
  double step_;
  std::vector<Kernel> kernels_;
};

// Gather formulation: out(p) = sum_q K_{sigma(p)}(q) * img(p + q) with
// replicate borders. Lut mode blends the two bracketing bin kernels linearly. threads <= 0 uses the process-wide setting; the result is
// bitwise independent of the thread count.
ImagePlane variant_blur(const ImagePlane& img, const BlurMap& map, const DegradeOpts& opts,
                        int threads = 0);

// out(i, j) = in(s*i + offset, s*j + offset).
ImagePlane decimate(const ImagePlane& img, int s, int offset = 0);

// decimate(variant_blur(img)) + N(0, noise_sigma^2), clamped to [0,1].
ImagePlane degrade(const ImagePlane& img, const BlurMap& map, const DegradeOpts& opts,
                   std::uint64_t seed, int threads = 0);

}  // namespace focalforge
