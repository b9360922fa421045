#include "focalforge/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "focalforge/error.hpp"
#include "focalforge/parallel.hpp"

namespace focalforge {

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + s + "' (expected train|val|test)");
}

void DatasetSpec::validate() const {
  if (!(invariant_fraction > 0.0 && invariant_fraction < 1.0))
    throw ValidationError("dataset.invariant_fraction must be in (0,1)");
  if (groups < 1) throw ValidationError("dataset.groups must be >= 1");
  if (!(sigma_max > 0.0)) throw ValidationError("dataset.sigma_max must be > 0");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ValidationError("dataset.kernel_size must be odd");
  if (scale_factor < 1) throw ValidationError("dataset.scale_factor must be >= 1");
  if (image_height < 1 || image_width < 1) throw ValidationError("dataset.image_size must be positive");
}

DatasetSpec DatasetSpec::nyuv2() {
  DatasetSpec s;
  s.name = "nyuv2-bsr";
  s.sigma_max = 5.0;
  s.kernel_size = 21;
  return s;
}

DatasetSpec DatasetSpec::cityscapes() {
  DatasetSpec s;
  s.name = "cityscapes-bsr";
  s.sigma_max = 15.0;
  s.kernel_size = 61;
  return s;
}

bool ManifestEntry::variant_in_group(int group) const {
  if (split != Split::kTest || group <= 0) return variant;
  return std::find(invariant_groups.begin(), invariant_groups.end(), group) == invariant_groups.end();
}

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = nlohmann::json{
      {"id", e.id},
      {"rgb_path", e.rgb_path},
      {"depth_path", e.depth_path},
      {"label_path", e.label_path},
      {"lr_path", e.lr_path},
      {"blurmap_path", e.blurmap_path},
      {"split", to_string(e.split)},
      {"group_memberships", e.group_memberships},
      {"invariant_groups", e.invariant_groups},
      {"variant", e.variant},
      {"invariant_sigma", e.invariant_sigma},
      {"lens",
       {{"focal_length", e.lens.focal_length_mm},
        {"aperture_diameter", e.lens.aperture_mm},
        {"focus_distance", e.lens.focus_distance_m},
        {"pixels_per_mm", e.lens.pixels_per_mm},
        {"coc_to_sigma", e.lens.coc_to_sigma},
        {"sigma_max", e.lens.sigma_max}}},
  };
}

void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.id = j.at("id").get<std::string>();
  e.rgb_path = j.value("rgb_path", "");
  e.depth_path = j.value("depth_path", "");
  e.label_path = j.value("label_path", "");
  e.lr_path = j.value("lr_path", "");
  e.blurmap_path = j.value("blurmap_path", "");
  e.split = split_from_string(j.value("split", "train"));
  e.group_memberships = j.value("group_memberships", std::vector<int>{});
  e.invariant_groups = j.value("invariant_groups", std::vector<int>{});
  e.variant = j.value("variant", true);
  e.invariant_sigma = j.value("invariant_sigma", 0.0);
  if (j.contains("lens")) {
    const auto& l = j.at("lens");
    e.lens.focal_length_mm = l.value("focal_length", e.lens.focal_length_mm);
    e.lens.aperture_mm = l.value("aperture_diameter", e.lens.aperture_mm);
    e.lens.focus_distance_m = l.value("focus_distance", e.lens.focus_distance_m);
    e.lens.pixels_per_mm = l.value("pixels_per_mm", e.lens.pixels_per_mm);
    e.lens.coc_to_sigma = l.value("coc_to_sigma", e.lens.coc_to_sigma);
    e.lens.sigma_max = l.value("sigma_max", e.lens.sigma_max);
  }
}

namespace {

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::size_t invariant_count(std::size_t n, double fraction) {
  // The epsilon absorbs products like 795 * 0.2 landing just below an integer.
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

double draw_invariant_sigma(std::uint64_t seed, const std::string& id, double sigma_max) {
  std::mt19937_64 rng(keyed_seed(seed, "invariant-sigma:" + id));
  std::uniform_real_distribution<double> u(0.0, sigma_max);
  return u(rng);
}

}  // namespace

std::vector<ManifestEntry> build_manifest(const DatasetSpec& spec, const std::vector<SourceTriple>& inputs,
                                          const SplitSizes& sizes, const LensParams& lens) {
  spec.validate();
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
    throw ValidationError("build_manifest: split sizes must be non-negative");
  const std::size_t needed = static_cast<std::size_t>(sizes.train) + sizes.val + sizes.test;
  if (inputs.size() < needed) {
    std::ostringstream os;
    os << "build_manifest: " << inputs.size() << " inputs cannot cover " << needed << " split entries";
    throw ValidationError(os.str());
  }

  LensParams base = lens;
  base.sigma_max = spec.sigma_max;

  std::vector<ManifestEntry> out;
  out.reserve(needed);
  std::size_t cursor = 0;
  const std::pair<Split, int> plan[] = {
      {Split::kTrain, sizes.train}, {Split::kVal, sizes.val}, {Split::kTest, sizes.test}};
  for (const auto& [split, count] : plan) {
    const std::size_t first = out.size();
    for (int i = 0; i < count; ++i, ++cursor) {
      const SourceTriple& src = inputs[cursor];
      ManifestEntry e;
      e.id = src.id;
      e.rgb_path = src.rgb_path;
      e.depth_path = src.depth_path;
      e.label_path = src.label_path;
      e.split = split;
      e.lens = base;
      e.invariant_sigma = draw_invariant_sigma(spec.seed, src.id, spec.sigma_max);
      out.push_back(std::move(e));
    }
    const std::size_t n = static_cast<std::size_t>(count);
    if (n == 0) continue;
    const std::size_t k = invariant_count(n, spec.invariant_fraction);
    const auto perm = seeded_permutation(n, keyed_seed(spec.seed, "split:" + to_string(split)));

    if (split != Split::kTest) {
      for (std::size_t i = 0; i < k; ++i) out[first + perm[i]].variant = false;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& gm = out[first + i].group_memberships;
      for (int g = 1; g <= spec.groups; ++g) gm.push_back(g);
    }
    // Group g takes the k ids starting at offset (g-1)*k of the permutation.
    for (int g = 1; g <= spec.groups; ++g)
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = perm[(static_cast<std::size_t>(g - 1) * k + i) % n];
        auto& ig = out[first + idx].invariant_groups;
        if (std::find(ig.begin(), ig.end(), g) == ig.end()) ig.push_back(g);
      }
    for (std::size_t i = 0; i < n; ++i) out[first + i].variant = out[first + i].variant_in_group(1);
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ManifestEntry>());
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) out << nlohmann::json(e).dump() << '\n';
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

SynthResult synthesize(const ManifestEntry& entry, const DatasetSpec& spec, const DegradeOpts& opts,
                       const ImagePlane& rgb, const DepthMap* depth, int group) {
  DegradeOpts o = opts;
  o.kernel_size = spec.kernel_size;
  o.scale_factor = spec.scale_factor;
  o.sigma_max = spec.sigma_max;

  SynthResult res;
  const std::string key = entry.id + "#" + std::to_string(group);
  if (entry.variant_in_group(group)) {
    if (depth == nullptr) throw ValidationError("synthesize: variant entry '" + entry.id + "' needs depth");
    if (depth->height != rgb.height() || depth->width != rgb.width())
      throw ValidationError("synthesize: depth and rgb sizes differ for '" + entry.id + "'");
    LensParams lens = entry.lens;
    lens.sigma_max = spec.sigma_max;
    if (lens.focus_distance_m <= 0.0)
      lens.focus_distance_m = sample_focus_distance(*depth, keyed_seed(spec.seed, "focus:" + entry.id));
    res.focus_distance_m = lens.focus_distance_m;
    res.blurmap = coc_sigma_map(*depth, lens);
  } else {
    res.blurmap = invariant_sigma_map(rgb.height(), rgb.width(),
                                      std::min(entry.invariant_sigma, spec.sigma_max), spec.sigma_max);
  }
  // The global thread setting may split rows; output is still bitwise stable.
  res.lr = degrade(rgb, res.blurmap, o, keyed_seed(spec.seed, "noise:" + key));
  return res;
}

SynthResult synthesize_entry(const ManifestEntry& entry, const DatasetSpec& spec, const DegradeOpts& opts,
                             int group) {
  const ImagePlane rgb = load_image(entry.rgb_path);
  if (entry.variant_in_group(group)) {
    const DepthMap depth = load_float_map<DepthTag>(entry.depth_path);
    return synthesize(entry, spec, opts, rgb, &depth, group);
  }
  return synthesize(entry, spec, opts, rgb, nullptr, group);
}

std::vector<ManifestEntry> synthesize_dataset(const std::vector<ManifestEntry>& entries, const DatasetSpec& spec,
                                              const DegradeOpts& opts, const std::filesystem::path& out_dir,
                                              const SynthOptions& sopts) {
  namespace fs = std::filesystem;
  if (sopts.group < 0 || sopts.group > spec.groups)
    throw ValidationError("group must be in [0, " + std::to_string(spec.groups) + "]");
  for (const char* sub : {"lr", "blur", "labels"}) fs::create_directories(out_dir / sub);
  std::vector<ManifestEntry> written;
  for (const auto& e : entries) {
    if (sopts.only_split && e.split != *sopts.only_split) continue;
    if (sopts.group > 0 && e.split != Split::kTest) continue;
    const std::string stem = sopts.group > 0 ? e.id + "_g" + std::to_string(sopts.group) : e.id;
    const SynthResult r = synthesize_entry(e, spec, opts, sopts.group);
    ManifestEntry out = e;
    out.lr_path = (out_dir / "lr" / (stem + ".png")).string();
    out.blurmap_path = (out_dir / "blur" / (stem + ".pfm")).string();
    save_image(r.lr, out.lr_path);
    save_float_map(r.blurmap, out.blurmap_path);
    if (r.focus_distance_m > 0.0) out.lens.focus_distance_m = r.focus_distance_m;
    if (!e.label_path.empty()) {
      const fs::path dst = out_dir / "labels" / (e.id + ".png");
      if (fs::absolute(e.label_path) != fs::absolute(dst)) fs::copy_file(e.label_path, dst, fs::copy_options::overwrite_existing);
      out.label_path = dst.string();
    }
    written.push_back(std::move(out));
  }
  write_manifest(written, out_dir / "manifest.jsonl");
  return written;
}

AugmentParams draw_augment(std::uint64_t seed, double flip_prob) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 2);
  std::bernoulli_distribution flip(flip_prob);
  AugmentParams p;
  p.ratio = kScaleRatios[pick(rng)];
  p.flip = flip(rng);
  return p;
}

namespace {

struct Tap {
  int i0, i1;
  double w;
};

// Half-pixel-center source coordinate for output index i.
Tap bilinear_tap(int i, int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  double s = (i + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in_size - 1));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, s - i0};
}

// Written as a + w (b - a) so equal neighbours reproduce the value exactly.
inline double lerp(double a, double b, double w) { return a + w * (b - a); }

}  // namespace

ImagePlane resize_bilinear(const ImagePlane& img, int height, int width) {
  ImagePlane out(height, width, img.channels());
  for (int y = 0; y < height; ++y) {
    const Tap ty = bilinear_tap(y, img.height(), height);
    for (int x = 0; x < width; ++x) {
      const Tap tx = bilinear_tap(x, img.width(), width);
      for (int c = 0; c < img.channels(); ++c) {
        const double top = lerp(img.at(ty.i0, tx.i0, c), img.at(ty.i0, tx.i1, c), tx.w);
        const double bot = lerp(img.at(ty.i1, tx.i0, c), img.at(ty.i1, tx.i1, c), tx.w);
        out.at(y, x, c) = static_cast<float>(lerp(top, bot, ty.w));
      }
    }
  }
  return out;
}

BlurMap resize_bilinear(const BlurMap& map, int height, int width) {
  BlurMap out(height, width);
  for (int y = 0; y < height; ++y) {
    const Tap ty = bilinear_tap(y, map.height, height);
    for (int x = 0; x < width; ++x) {
      const Tap tx = bilinear_tap(x, map.width, width);
      const double top = lerp(map.at(ty.i0, tx.i0), map.at(ty.i0, tx.i1), tx.w);
      const double bot = lerp(map.at(ty.i1, tx.i0), map.at(ty.i1, tx.i1), tx.w);
      out.at(y, x) = static_cast<float>(lerp(top, bot, ty.w));
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& labels, int height, int width) {
  LabelMap out(height, width, labels.classes);
  out.ignore_value = labels.ignore_value;
  const double sy = static_cast<double>(labels.height) / height;
  const double sx = static_cast<double>(labels.width) / width;
  for (int y = 0; y < height; ++y) {
    const int iy = std::min(labels.height - 1, static_cast<int>(std::floor((y + 0.5) * sy)));
    for (int x = 0; x < width; ++x) {
      const int ix = std::min(labels.width - 1, static_cast<int>(std::floor((x + 0.5) * sx)));
      out.at(y, x) = labels.at(iy, ix);
    }
  }
  return out;
}

ImagePlane flip_horizontal(const ImagePlane& img) {
  ImagePlane out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

BlurMap flip_horizontal(const BlurMap& map) {
  BlurMap out(map.height, map.width);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) out.at(y, x) = map.at(y, map.width - 1 - x);
  return out;
}

LabelMap flip_horizontal(const LabelMap& labels) {
  LabelMap out = labels;
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) out.at(y, x) = labels.at(y, labels.width - 1 - x);
  return out;
}

Augmented apply_augment(const ImagePlane& rgb, const BlurMap& blurmap, const LabelMap& labels,
                        const AugmentParams& params) {
  if (rgb.height() != blurmap.height || rgb.width() != blurmap.width || rgb.height() != labels.height ||
      rgb.width() != labels.width)
    throw ValidationError("augment: rgb, blur map and labels must be aligned");
  if (!(params.ratio >= 1.0)) throw ValidationError("augment: ratio must be >= 1");
  Augmented a;
  if (params.ratio == 1.0) {
    a.rgb = rgb;
    a.blurmap = blurmap;
    a.labels = labels;
  } else {
    const int h = std::max(1, static_cast<int>(std::lround(rgb.height() / params.ratio)));
    const int w = std::max(1, static_cast<int>(std::lround(rgb.width() / params.ratio)));
    a.rgb = resize_bilinear(rgb, h, w);
    a.blurmap = resize_bilinear(blurmap, h, w);
    for (float& v : a.blurmap.data) v = static_cast<float>(v / params.ratio);
    a.labels = resize_nearest(labels, h, w);
  }
  if (params.flip) {
    a.rgb = flip_horizontal(a.rgb);
    a.blurmap = flip_horizontal(a.blurmap);
    a.labels = flip_horizontal(a.labels);
  }
  return a;
}

Augmented augment(const ImagePlane& rgb, const BlurMap& blurmap, const LabelMap& labels, std::uint64_t seed) {
  return apply_augment(rgb, blurmap, labels, draw_augment(seed));
}

}  // namespace focalforge
