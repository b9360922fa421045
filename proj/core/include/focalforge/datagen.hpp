#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focalforge/imageio.hpp"
#include "focalforge/optics.hpp"
#include "focalforge/svblur.hpp"

namespace focalforge {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Dataset-level synthesis parameters.
struct DatasetSpec {
  std::string name = "nyuv2-bsr";
  double sigma_max = 5.0;
  int kernel_size = 21;
  int scale_factor = 4;
  // Fraction of each split blurred by a single space-invariant kernel.
  double invariant_fraction = 0.2;
  int groups = 5;
  int image_height = 480;
  int image_width = 640;
  std::uint64_t seed = 0;

  void validate() const;

  static DatasetSpec nyuv2();
  static DatasetSpec cityscapes();
};

struct SplitSizes {
  int train = 0;
  int val = 0;
  int test = 0;
};

/// One (rgb, depth, label) source image.
struct SourceTriple {
  std::string id;
  std::string rgb_path;
  std::string depth_path;
  std::string label_path;
};

struct ManifestEntry {
  std::string id;
  std::string rgb_path;
  std::string depth_path;
  std::string label_path;
  std::string lr_path;
  std::string blurmap_path;
  Split split = Split::kTrain;
  // Test entries belong to every group; empty for train/val.
  std::vector<int> group_memberships;
  // Test groups in which this entry is blurred space-invariantly.
  std::vector<int> invariant_groups;
  // For train/val: whether the entry is space-variant. For test: the status
  // in group 1 (use variant_in_group for the others).
  bool variant = true;
  double invariant_sigma = 0.0;
  LensParams lens;

  bool variant_in_group(int group) const;
};

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

// Assigns inputs to splits in order (train, val, test), flags
// floor(invariant_fraction * n) entries per split as invariant via a seeded
// permutation, and gives each test group a disjoint rotation of that size.
std::vector<ManifestEntry> build_manifest(const DatasetSpec& spec,
                                          const std::vector<SourceTriple>& inputs,
                                          const SplitSizes& sizes,
                                          const LensParams& lens = {});

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

struct SynthResult {
  ImagePlane lr;
  BlurMap blurmap;  // HR resolution
  double focus_distance_m = 0.0;
};

// group = 0 means "use entry.variant"; 1..groups selects the test group.
SynthResult synthesize_entry(const ManifestEntry& entry, const DatasetSpec& spec,
                             const DegradeOpts& opts, int group = 0);

// Same as above, but with the HR image and depth supplied in memory.
SynthResult synthesize(const ManifestEntry& entry, const DatasetSpec& spec, const DegradeOpts& opts,
                       const ImagePlane& rgb, const DepthMap* depth, int group = 0);

struct SynthOptions {
  std::optional<Split> only_split;
  int group = 0;  // 0: entry.variant; 1..groups: that test group
};

// Synthesizes every selected entry into out_dir/{lr,blur,labels}/ (PNG LR,
// PFM blur map, copied label PNG) and writes out_dir/manifest.jsonl with the
// LR and blur-map paths filled in. Returns the written entries.
std::vector<ManifestEntry> synthesize_dataset(const std::vector<ManifestEntry>& entries, const DatasetSpec& spec,
                                              const DegradeOpts& opts, const std::filesystem::path& out_dir,
                                              const SynthOptions& sopts = {});

struct AugmentParams {
  double ratio = 1.0;
  bool flip = false;
};

inline constexpr double kScaleRatios[] = {1.0, 1.2, 1.5};

AugmentParams draw_augment(std::uint64_t seed, double flip_prob = 0.5);

struct Augmented {
  ImagePlane rgb;
  BlurMap blurmap;
  LabelMap labels;
};

// Downscales by the ratio (bilinear for rgb and blur, nearest for labels),
// divides blur values by the ratio, then optionally flips all three.
Augmented augment(const ImagePlane& rgb, const BlurMap& blurmap, const LabelMap& labels,
                  std::uint64_t seed);
Augmented apply_augment(const ImagePlane& rgb, const BlurMap& blurmap, const LabelMap& labels,
                        const AugmentParams& params);

// Resampling helpers (half-pixel centers, clamped borders).
ImagePlane resize_bilinear(const ImagePlane& img, int height, int width);
BlurMap resize_bilinear(const BlurMap& map, int height, int width);
LabelMap resize_nearest(const LabelMap& labels, int height, int width);
ImagePlane flip_horizontal(const ImagePlane& img);
BlurMap flip_horizontal(const BlurMap& map);
LabelMap flip_horizontal(const LabelMap& labels);

}  // namespace focalforge
