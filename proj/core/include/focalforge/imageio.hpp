#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace focalforge {

/// H x W x C raster of samples in [0,1], row-major with channels interleaved.
/// Holds both the HR image and the degraded LR image.
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(int height, int width, int channels, float fill = 0.0f);
  ImagePlane(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool operator==(const ImagePlane&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Single-channel float raster. The tag keeps depth (meters) and blur
/// (Gaussian sigma in HR pixels) from being mixed up.
template <class Tag>
struct FloatMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FloatMap() = default;
  FloatMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const FloatMap&) const = default;
};

struct DepthTag {};
struct BlurTag {};
using DepthMap = FloatMap<DepthTag>;
using BlurMap = FloatMap<BlurTag>;

/// Per-pixel class ids. Ids are < classes or equal to ignore_value.
struct LabelMap {
  static constexpr std::uint8_t kDefaultIgnore = 255;

  int height = 0;
  int width = 0;
  int classes = 0;
  std::uint8_t ignore_value = kDefaultIgnore;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, int num_classes, std::uint8_t fill = 0)
      : height(h), width(w), classes(num_classes),
        data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const LabelMap&) const = default;
};

// Throws ValidationError if any id is neither < classes nor ignore_value.
void validate(const LabelMap& labels);
// Throws ValidationError naming the first non-positive or non-finite pixel.
void validate(const DepthMap& depth);

// PNG, 8- or 16-bit, gray or RGB (alpha is dropped). Throws IoError.
ImagePlane load_image(const std::filesystem::path& path);
void save_image(const ImagePlane& img, const std::filesystem::path& path, int bit_depth = 8);

// Label maps are 8-bit gray PNGs whose sample value is the class id.
LabelMap load_labels(const std::filesystem::path& path, int classes,
                     std::uint8_t ignore_value = LabelMap::kDefaultIgnore);
void save_labels(const LabelMap& labels, const std::filesystem::path& path);

// PFM ("Pf", little-endian negative scale, bottom-to-top rows). Lossless for
// float32. Non-finite payloads are rejected on load.
struct RawFloatMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;
};
RawFloatMap load_pfm(const std::filesystem::path& path);
void save_pfm(int height, int width, std::span<const float> data, const std::filesystem::path& path);

template <class Tag>
FloatMap<Tag> load_float_map(const std::filesystem::path& path) {
  RawFloatMap raw = load_pfm(path);
  FloatMap<Tag> m;
  m.height = raw.height;
  m.width = raw.width;
  m.data = std::move(raw.data);
  return m;
}

template <class Tag>
void save_float_map(const FloatMap<Tag>& map, const std::filesystem::path& path) {
  save_pfm(map.height, map.width, map.data, path);
}

// BT.601 studio-swing luma: 16/255 + (65.481 R + 128.553 G + 24.966 B) / 255.
ImagePlane rgb_to_ycbcr_y(const ImagePlane& img);

}  // namespace focalforge
