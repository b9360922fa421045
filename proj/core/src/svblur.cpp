#include "focalforge/svblur.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>

#include "focalforge/error.hpp"
#include "focalforge/parallel.hpp"

namespace focalforge {

void DegradeOpts::validate() const {
  if (scale_factor < 1) throw ValidationError("degrade.scale_factor must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ValidationError("degrade.kernel_size must be odd");
  if (lut_bins < 2) throw ValidationError("degrade.lut_bins must be >= 2");
  if (!(noise_sigma >= 0.0)) throw ValidationError("degrade.noise_sigma must be >= 0");
  if (decimation_offset < 0 || decimation_offset >= scale_factor)
    throw ValidationError("degrade.decimation_offset must be in [0, scale_factor)");
  if (!(sigma_max > 0.0)) throw ValidationError("degrade.sigma_max must be > 0");
}

Kernel gaussian_kernel(double sigma, int size) {
  if (size < 1 || size % 2 == 0) throw ValidationError("gaussian_kernel: size must be odd");
  if (!(sigma >= 0.0)) throw ValidationError("gaussian_kernel: sigma must be >= 0");
  Kernel k;
  k.size = size;
  k.weights.assign(static_cast<std::size_t>(size) * size, 0.0);
  const int r = size / 2;
  if (sigma < 1e-6) {
    k.weights[static_cast<std::size_t>(r) * size + r] = 1.0;
    return k;
  }
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double w = std::exp(-static_cast<double>(dx * dx + dy * dy) * inv);
      k.weights[static_cast<std::size_t>(dy + r) * size + (dx + r)] = w;
      sum += w;
    }
  for (double& w : k.weights) w /= sum;
  return k;
}

KernelLut::KernelLut(double sigma_max, int bins, int size)
    : sigma_max_(sigma_max), step_(sigma_max / (bins - 1)) {
  if (bins < 2) throw ValidationError("KernelLut: bins must be >= 2");
  kernels_.reserve(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) kernels_.push_back(gaussian_kernel(bin_sigma(b), size));
}

int KernelLut::bin(double sigma) const {
  const double clamped = std::clamp(sigma, 0.0, sigma_max_);
  return static_cast<int>(std::lround(clamped / step_));
}

KernelLut::Bracket KernelLut::bracket(double sigma) const {
  const double pos = std::clamp(sigma, 0.0, sigma_max_) / step_;
  const int lo = std::min(static_cast<int>(pos), bins() - 2);
  return {lo, std::min(1.0, pos - lo)};
}

namespace {

// Channel-planar copy with a replicate border of `r` pixels.
std::vector<float> pad_planar(const ImagePlane& img, int r) {
  const int h = img.height(), w = img.width(), c = img.channels();
  const int ph = h + 2 * r, pw = w + 2 * r;
  std::vector<float> out(static_cast<std::size_t>(c) * ph * pw);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ph; ++y) {
      const int sy = std::clamp(y - r, 0, h - 1);
      float* row = out.data() + (static_cast<std::size_t>(ch) * ph + y) * pw;
      for (int x = 0; x < pw; ++x) row[x] = img.at(sy, std::clamp(x - r, 0, w - 1), ch);
    }
  return out;
}

// Small per-thread kernel cache for exact mode; cleared when it grows.
class ExactKernelCache {
 public:
  explicit ExactKernelCache(int size) : size_(size) {}

  const Kernel& get(float sigma) {
    const std::uint32_t key = std::bit_cast<std::uint32_t>(sigma);
    if (last_ && last_key_ == key) return *last_;
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      if (cache_.size() >= 1024) cache_.clear();
      it = cache_.emplace(key, gaussian_kernel(sigma, size_)).first;
    }
    last_key_ = key;
    last_ = &it->second;
    return *last_;
  }

 private:
  int size_;
  std::unordered_map<std::uint32_t, Kernel> cache_;
  std::uint32_t last_key_ = 0;
  const Kernel* last_ = nullptr;
};

}  // namespace

ImagePlane variant_blur(const ImagePlane& img, const BlurMap& map, const DegradeOpts& opts, int threads) {
  opts.validate();
  if (img.height() != map.height || img.width() != map.width) {
    std::ostringstream os;
    os << "variant_blur: image is " << img.height() << "x" << img.width() << " but blur map is "
       << map.height << "x" << map.width;
    throw ValidationError(os.str());
  }
  const int h = img.height(), w = img.width(), c = img.channels();
  const int k = opts.kernel_size, r = k / 2;
  const int pw = w + 2 * r;
  const std::size_t plane = static_cast<std::size_t>(h + 2 * r) * pw;
  const std::vector<float> padded = pad_planar(img, r);

  std::unique_ptr<KernelLut> lut;
  if (opts.mode == BlurMode::kLut) lut = std::make_unique<KernelLut>(opts.sigma_max, opts.lut_bins, k);

  ImagePlane out(h, w, c);
  parallel_for(0, h, [&](std::int64_t y0, std::int64_t y1) {
    ExactKernelCache cache(k);
    std::vector<double> blend(static_cast<std::size_t>(k) * k);
    KernelLut::Bracket last{-1, 0.0};
    for (auto y = static_cast<int>(y0); y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const float sigma = map.at(y, x);
        const double* weights = nullptr;
        if (lut) {
          const auto br = lut->bracket(sigma);
          if (br.lo != last.lo || br.t != last.t) {
            const double* a = lut->kernel(br.lo).weights.data();
            const double* b = lut->kernel(br.lo + 1).weights.data();
            for (std::size_t i = 0; i < blend.size(); ++i) blend[i] = a[i] + br.t * (b[i] - a[i]);
            last = br;
          }
          weights = blend.data();
        } else {
          weights = cache.get(sigma).weights.data();
        }
        for (int ch = 0; ch < c; ++ch) {
          const float* base = padded.data() + ch * plane + static_cast<std::size_t>(y) * pw + x;
          double s = 0.0;
          const double* wk = weights;
          for (int ky = 0; ky < k; ++ky, wk += k) {
            const float* row = base + static_cast<std::size_t>(ky) * pw;
            for (int kx = 0; kx < k; ++kx) s += wk[kx] * row[kx];
          }
          out.at(y, x, ch) = static_cast<float>(s);
        }
      }
    }
  }, threads);
  return out;
}

ImagePlane decimate(const ImagePlane& img, int s, int offset) {
  if (s < 1) throw ValidationError("decimate: scale factor must be >= 1");
  if (offset < 0 || offset >= s) throw ValidationError("decimate: offset must be in [0, s)");
  const int oh = std::max(0, (img.height() - offset) / s);
  const int ow = std::max(0, (img.width() - offset) / s);
  ImagePlane out(oh, ow, img.channels());
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < img.channels(); ++ch)
        out.at(y, x, ch) = img.at(s * y + offset, s * x + offset, ch);
  return out;
}

ImagePlane degrade(const ImagePlane& img, const BlurMap& map, const DegradeOpts& opts,
                   std::uint64_t seed, int threads) {
  ImagePlane lr = decimate(variant_blur(img, map, opts, threads), opts.scale_factor,
                           opts.decimation_offset);
  if (opts.noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, opts.noise_sigma);
    for (float& v : lr.data()) v = static_cast<float>(v + noise(rng));
  }
  for (float& v : lr.data()) v = std::clamp(v, 0.0f, 1.0f);
  return lr;
}

}  // namespace focalforge
