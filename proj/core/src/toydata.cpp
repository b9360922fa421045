#include "focalforge/toydata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "focalforge/error.hpp"
#include "focalforge/parallel.hpp"

namespace focalforge {

ToySpec::ToySpec() {
  dataset.name = "toy";
  dataset.sigma_max = 5.0;
  dataset.kernel_size = 21;
  dataset.scale_factor = 4;
  dataset.image_height = hr_size;
  dataset.image_width = hr_size;
  lens.focus_distance_m = 0.0;
}

void ToySpec::validate() const {
  if (count < 1) throw ValidationError("toy count must be positive");
  if (classes < 2 || classes > 8 || classes % 2 != 0) throw ValidationError("toy classes must be 2, 4, 6 or 8");
  if (hr_size < 16 * dataset.scale_factor || hr_size % (16 * dataset.scale_factor) != 0)
    throw ValidationError("toy hr_size must be a positive multiple of 16 * scale_factor");
  if (sizes.train + sizes.val + sizes.test != count) throw ValidationError("toy split sizes must sum to count");
  dataset.validate();
}

namespace {

struct ClassLook {
  std::array<float, 3> color;
  float angle;   // stripe orientation, radians
  float period;  // HR pixels
};

ClassLook class_look(int k) {
  static const ClassLook looks[] = {
      {{0.25f, 0.35f, 0.75f}, 0.0f, 14.0f},  {{0.30f, 0.70f, 0.30f}, 1.5708f, 10.0f},
      {{0.80f, 0.30f, 0.25f}, 0.7854f, 12.0f}, {{0.80f, 0.75f, 0.25f}, 2.3562f, 8.0f},
      {{0.60f, 0.30f, 0.70f}, 0.3927f, 16.0f}, {{0.30f, 0.70f, 0.75f}, 1.1781f, 9.0f},
      {{0.55f, 0.55f, 0.55f}, 1.9635f, 11.0f}, {{0.90f, 0.55f, 0.35f}, 2.7489f, 13.0f},
  };
  return looks[k];
}

// Bilinearly interpolated lattice noise in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(int size, int cell, std::mt19937_64& rng) : cell_(cell), n_(size / cell + 2) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    grid_.resize(static_cast<std::size_t>(n_) * n_);
    for (auto& v : grid_) v = u(rng);
  }
  float operator()(int y, int x) const {
    const float fy = static_cast<float>(y) / cell_, fx = static_cast<float>(x) / cell_;
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const float wy = fy - y0, wx = fx - x0;
    auto g = [&](int a, int b) { return grid_[static_cast<std::size_t>(a) * n_ + b]; };
    const float top = g(y0, x0) + wx * (g(y0, x0 + 1) - g(y0, x0));
    const float bot = g(y0 + 1, x0) + wx * (g(y0 + 1, x0 + 1) - g(y0 + 1, x0));
    return top + wy * (bot - top);
  }

 private:
  int cell_, n_;
  std::vector<float> grid_;
};

}  // namespace

ToyScene make_toy_scene(const ToySpec& spec, int index) {
  std::mt19937_64 rng(keyed_seed(spec.seed, "toy:" + std::to_string(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = spec.hr_size;
  const int half = spec.classes / 2;

  const double z_near = 1.0 + 0.6 * u(rng);
  const double z_far = 3.0 + 5.0 * u(rng);
  const int bg_class = static_cast<int>(u(rng) * half) % half;
  const int fg_class = half + static_cast<int>(u(rng) * half) % half;

  struct Blob {
    double cy, cx, ry, rx;
  };
  std::vector<Blob> blobs(1 + static_cast<int>(u(rng) * 2.0));
  for (auto& b : blobs) {
    b.cy = n * (0.2 + 0.6 * u(rng));
    b.cx = n * (0.2 + 0.6 * u(rng));
    b.ry = n * (0.12 + 0.18 * u(rng));
    b.rx = n * (0.12 + 0.18 * u(rng));
  }
  const double phase_bg = 6.2832 * u(rng), phase_fg = 6.2832 * u(rng);
  const float gain_bg = static_cast<float>(0.8 + 0.4 * u(rng)), gain_fg = static_cast<float>(0.8 + 0.4 * u(rng));
  ValueNoise fine(n, 3, rng), coarse(n, 24, rng);

  ToyScene s{ImagePlane(n, n, 3), DepthMap(n, n), LabelMap(n, n, spec.classes)};
  const ClassLook lb = class_look(bg_class), lf = class_look(fg_class);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      bool fg = false;
      for (const auto& b : blobs) {
        const double dy = (y + 0.5 - b.cy) / b.ry, dx = (x + 0.5 - b.cx) / b.rx;
        fg = fg || dy * dy + dx * dx <= 1.0;
      }
      const ClassLook& look = fg ? lf : lb;
      const double t = (x * std::cos(look.angle) + y * std::sin(look.angle)) * 6.2832 / look.period +
                       (fg ? phase_fg : phase_bg);
      const float tex = 0.22f * static_cast<float>(std::sin(t)) + 0.12f * fine(y, x) + 0.08f * coarse(y, x);
      const float gain = fg ? gain_fg : gain_bg;
      for (int c = 0; c < 3; ++c) s.rgb.at(y, x, c) = std::clamp(look.color[c] * gain + tex, 0.0f, 1.0f);
      s.depth.at(y, x) = static_cast<float>(fg ? z_near : z_far);
      s.labels.at(y, x) = static_cast<std::uint8_t>(fg ? fg_class : bg_class);
    }
  return s;
}

std::vector<ManifestEntry> make_toy_dataset(const ToySpec& spec, const DegradeOpts& opts,
                                            const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  spec.validate();
  const fs::path src = dir / "source";
  fs::create_directories(src);
  std::vector<SourceTriple> triples;
  for (int i = 0; i < spec.count; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "toy%04d", i);
    const ToyScene scene = make_toy_scene(spec, i);
    SourceTriple t{id, (src / (std::string(id) + "_rgb.png")).string(), (src / (std::string(id) + "_depth.pfm")).string(),
                   (src / (std::string(id) + "_label.png")).string()};
    save_image(scene.rgb, t.rgb_path, 16);
    save_float_map(scene.depth, t.depth_path);
    save_labels(scene.labels, t.label_path);
    triples.push_back(std::move(t));
  }
  DatasetSpec ds = spec.dataset;
  ds.seed = spec.seed;
  ds.image_height = ds.image_width = spec.hr_size;
  const auto entries = build_manifest(ds, triples, spec.sizes, spec.lens);
  return synthesize_dataset(entries, ds, opts, dir);
}

}  // namespace focalforge
