#include "focalforge/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "focalforge/error.hpp"

namespace focalforge {

ImagePlane::ImagePlane(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels),
      data_(static_cast<std::size_t>(height) * width * channels, fill) {
  if (height < 0 || width < 0 || channels < 1)
    throw ValidationError("ImagePlane: invalid dimensions");
}

ImagePlane::ImagePlane(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 0 || width < 0 || channels < 1)
    throw ValidationError("ImagePlane: invalid dimensions");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels)
    throw ValidationError("ImagePlane: data length does not match height*width*channels");
}

void validate(const LabelMap& labels) {
  if (labels.data.size() != static_cast<std::size_t>(labels.height) * labels.width)
    throw ValidationError("LabelMap: data length mismatch");
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const auto v = labels.data[i];
    if (v != labels.ignore_value && v >= labels.classes) {
      std::ostringstream os;
      os << "LabelMap: id " << int(v) << " at pixel (" << i / labels.width << ","
         << i % labels.width << ") is outside [0," << labels.classes << ")";
      throw ValidationError(os.str());
    }
  }
}

void validate(const DepthMap& depth) {
  if (depth.data.size() != static_cast<std::size_t>(depth.height) * depth.width)
    throw ValidationError("DepthMap: data length mismatch");
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    const float z = depth.data[i];
    if (!(z > 0.0f) || !std::isfinite(z)) {
      std::ostringstream os;
      os << "DepthMap: invalid depth " << z << " at pixel (" << i / depth.width << ","
         << i % depth.width << ")";
      throw ValidationError(os.str());
    }
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

struct RawPng {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

RawPng read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + path.string() + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  RawPng out;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth != 8 && depth != 16 && color != PNG_COLOR_TYPE_PALETTE) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG bit depth " + std::to_string(depth) + " in '" + path.string() + "'");
  }
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  if (out.channels != 1 && out.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG channel layout in '" + path.string() + "'");
  }
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      out.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

void write_png(const std::filesystem::path& path, int height, int width, int channels,
               int bit_depth, const std::vector<std::uint16_t>& samples) {
  FilePtr f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  std::vector<png_byte> buffer(rowbytes * height);
  const std::size_t n = samples.size();
  if (bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      buffer[2 * i] = static_cast<png_byte>(samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xFF);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) buffer[i] = static_cast<png_byte>(samples[i]);
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + rowbytes * y;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImagePlane load_image(const std::filesystem::path& path) {
  RawPng raw = read_png(path);
  const float maxv = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  std::vector<float> data(raw.samples.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(raw.samples[i]) / maxv;
  return ImagePlane(raw.height, raw.width, raw.channels, std::move(data));
}

void save_image(const ImagePlane& img, const std::filesystem::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ValidationError("save_image: bit_depth must be 8 or 16");
  if (img.channels() != 1 && img.channels() != 3)
    throw ValidationError("save_image: only 1- or 3-channel images can be written");
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<std::uint16_t> q(img.size());
  auto src = img.data();
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!std::isfinite(src[i])) throw ValidationError("save_image: non-finite sample at index " + std::to_string(i));
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    q[i] = static_cast<std::uint16_t>(std::lround(v * maxv));
  }
  write_png(path, img.height(), img.width(), img.channels(), bit_depth, q);
}

LabelMap load_labels(const std::filesystem::path& path, int classes, std::uint8_t ignore_value) {
  RawPng raw = read_png(path);
  if (raw.channels != 1 || raw.bit_depth != 8)
    throw IoError("label map '" + path.string() + "' must be an 8-bit gray PNG");
  LabelMap m(raw.height, raw.width, classes);
  m.ignore_value = ignore_value;
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<std::uint8_t>(raw.samples[i]);
  validate(m);
  return m;
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
  std::vector<std::uint16_t> q(labels.data.begin(), labels.data.end());
  write_png(path, labels.height, labels.width, 1, 8, q);
}

RawFloatMap load_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  if (!(in >> magic >> width >> height >> scale))
    throw IoError("malformed PFM header in '" + path.string() + "'");
  if (magic != "Pf")
    throw IoError("'" + path.string() + "' is not a single-channel PFM (magic " + magic + ")");
  if (width <= 0 || height <= 0 || scale == 0.0)
    throw IoError("malformed PFM header in '" + path.string() + "'");
  in.get();  // single whitespace byte after the scale
  const bool little = scale < 0.0;

  RawFloatMap m;
  m.height = height;
  m.width = width;
  m.data.resize(static_cast<std::size_t>(width) * height);
  std::vector<unsigned char> row(static_cast<std::size_t>(width) * 4);
  for (int y = height - 1; y >= 0; --y) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size())))
      throw IoError("truncated PFM payload in '" + path.string() + "'");
    for (int x = 0; x < width; ++x) {
      unsigned char b[4];
      std::memcpy(b, row.data() + 4 * x, 4);
      if (!little) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
      float v;
      std::memcpy(&v, b, 4);
      if (!std::isfinite(v))
        throw IoError("non-finite value in PFM '" + path.string() + "' at (" + std::to_string(y) +
                      "," + std::to_string(x) + ")");
      m.data[static_cast<std::size_t>(y) * width + x] = v;
    }
  }
  return m;
}

void save_pfm(int height, int width, std::span<const float> data, const std::filesystem::path& path) {
  if (data.size() != static_cast<std::size_t>(height) * width)
    throw ValidationError("save_pfm: data length does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "Pf\n" << width << " " << height << "\n-1.0\n";
  static_assert(sizeof(float) == 4);
  for (int y = height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(data.data() + static_cast<std::size_t>(y) * width),
              static_cast<std::streamsize>(width) * 4);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ImagePlane rgb_to_ycbcr_y(const ImagePlane& img) {
  if (img.channels() != 3) throw ValidationError("rgb_to_ycbcr_y: expected a 3-channel image");
  ImagePlane y(img.height(), img.width(), 1);
  auto src = img.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double r = src[3 * i], g = src[3 * i + 1], b = src[3 * i + 2];
    dst[i] = static_cast<float>(16.0 / 255.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
  }
  return y;
}

}  // namespace focalforge
