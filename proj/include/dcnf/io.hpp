#pragma once

// File formats: 8/16-bit PNG (libpng), grayscale PFM, depth maps and
// colour-mapped depth visualisations.

#include "dcnf/errors.hpp"
#include "dcnf/image.hpp"
#include "dcnf/metrics.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace dcnf {

/// Decoded PNG samples widened to 16 bits (8-bit values stay in [0, 255]).
struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba
  int bit_depth = 0;  // 8 or 16
  std::vector<uint16_t> samples;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open '" + path + "'");
  return f;
}

[[noreturn]] inline void png_error_handler(png_structp png, png_const_charp) { png_longjmp(png, 1); }
inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

inline PngData read_png(const std::string& path) {
  auto file = detail::open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw DataError("'" + path + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_handler, detail::png_warning_handler);
  if (!png) throw DataError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  PngData out;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng: failed to decode '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * static_cast<size_t>(out.height));
  rows.resize(static_cast<size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<size_t>(y)] = raw.data() + rowbytes * static_cast<size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const size_t count = static_cast<size_t>(out.width) * out.height * out.channels;
  out.samples.resize(count);
  if (out.bit_depth == 16) {
    for (size_t i = 0; i < count; ++i) std::memcpy(&out.samples[i], raw.data() + 2 * i, 2);
  } else {
    for (size_t i = 0; i < count; ++i) out.samples[i] = raw[i];
  }
  return out;
}

inline void write_png(const std::string& path, const PngData& data) {
  if (data.bit_depth != 8 && data.bit_depth != 16) throw DimensionError("write_png: bit depth must be 8 or 16");
  if (data.samples.size() != static_cast<size_t>(data.width) * data.height * data.channels)
    throw DimensionError("write_png: sample count mismatch");
  int color_type = PNG_COLOR_TYPE_GRAY;
  switch (data.channels) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default: throw DimensionError("write_png: unsupported channel count");
  }
  const size_t bytes = static_cast<size_t>(data.bit_depth / 8);
  const size_t rowbytes = static_cast<size_t>(data.width) * data.channels * bytes;
  std::vector<unsigned char> raw(rowbytes * static_cast<size_t>(data.height));
  for (size_t i = 0; i < data.samples.size(); ++i) {
    if (bytes == 2) {
      raw[2 * i] = static_cast<unsigned char>(data.samples[i] >> 8);  // PNG is big-endian
      raw[2 * i + 1] = static_cast<unsigned char>(data.samples[i] & 0xff);
    } else {
      raw[i] = static_cast<unsigned char>(std::min<uint16_t>(data.samples[i], 255));
    }
  }
  auto file = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_handler, detail::png_warning_handler);
  if (!png) throw DataError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<size_t>(data.height));
  for (int y = 0; y < data.height; ++y) rows[static_cast<size_t>(y)] = raw.data() + rowbytes * static_cast<size_t>(y);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng: failed to encode '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(data.width), static_cast<png_uint_32>(data.height), data.bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Any 8/16-bit PNG to RGB in [0, 1] (grey is replicated, alpha dropped).
inline ImageRgb load_image(const std::string& path) {
  const PngData png = read_png(path);
  const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
  ImageRgb image(png.width, png.height);
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      const size_t i = (static_cast<size_t>(y) * png.width + x) * png.channels;
      std::array<float, 3> rgb{};
      for (int c = 0; c < 3; ++c) {
        const size_t src = png.channels >= 3 ? i + c : i;
        rgb[static_cast<size_t>(c)] = static_cast<float>(png.samples[src] / scale);
      }
      image.set_pixel(x, y, rgb);
    }
  return image;
}

inline void save_image(const std::string& path, const ImageRgb& image) {
  PngData png{image.width(), image.height(), 3, 8, {}};
  png.samples.reserve(image.data().size());
  for (float v : image.data()) png.samples.push_back(static_cast<uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  write_png(path, png);
}

/// Single-channel little-endian PFM ("Pf", negative scale), rows stored
/// bottom to top as the format prescribes.
inline void write_pfm(const std::string& path, int width, int height, const std::vector<float>& values) {
  if (values.size() != static_cast<size_t>(width) * height) throw DimensionError("write_pfm: size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "Pf\n" << width << ' ' << height << "\n-1.0\n";
  for (int y = height - 1; y >= 0; --y)
    for (int x = 0; x < width; ++x) {
      uint32_t bits = std::bit_cast<uint32_t>(values[static_cast<size_t>(y) * width + x]);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      os.write(reinterpret_cast<const char*>(&bits), 4);
    }
  if (!os) throw DataError("failed writing '" + path + "'");
}

inline std::vector<float> read_pfm(const std::string& path, int& width, int& height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::string magic;
  double scale = 0.0;
  is >> magic >> width >> height >> scale;
  if (magic != "Pf") throw DataError("'" + path + "' is not a single-channel PFM");
  if (!is || width < 1 || height < 1 || scale == 0.0) throw DataError("'" + path + "': malformed PFM header");
  is.get();  // single whitespace before the payload
  const bool little = scale < 0.0;
  std::vector<float> values(static_cast<size_t>(width) * height);
  for (int y = height - 1; y >= 0; --y)
    for (int x = 0; x < width; ++x) {
      uint32_t bits = 0;
      if (!is.read(reinterpret_cast<char*>(&bits), 4)) throw DataError("'" + path + "': truncated PFM payload");
      if (little != (std::endian::native == std::endian::little)) bits = __builtin_bswap32(bits);
      values[static_cast<size_t>(y) * width + x] = std::bit_cast<float>(bits);
    }
  return values;
}

inline bool has_extension(const std::string& path, const char* ext) {
  std::string e = std::filesystem::path(path).extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ext;
}

/// 16-bit PNG (value * unit_scale = meters, 0 = invalid) or PFM (meters,
/// non-finite or non-positive = invalid). Valid depths are clamped to max_depth.
inline DepthField load_depth(const std::string& path, double unit_scale, double max_depth) {
  if (!(unit_scale > 0.0) || !(max_depth > 0.0)) throw ParameterError("load_depth: unit_scale and max_depth must be > 0");
  DepthField field;
  if (has_extension(path, ".pfm")) {
    int w = 0;
    int h = 0;
    const std::vector<float> values = read_pfm(path, w, h);
    field = DepthField(w, h);
    for (size_t i = 0; i < values.size(); ++i) {
      const double d = values[i];
      field.valid[i] = std::isfinite(d) && d > 0.0;
      field.depth[i] = field.valid[i] ? std::min(d, max_depth) : 0.0;
    }
  } else {
    const PngData png = read_png(path);
    if (png.channels != 1 || png.bit_depth != 16) throw DataError("'" + path + "': depth PNG must be 16-bit single-channel");
    field = DepthField(png.width, png.height);
    for (size_t i = 0; i < png.samples.size(); ++i) {
      field.valid[i] = png.samples[i] != 0;
      field.depth[i] = field.valid[i] ? std::min(png.samples[i] * unit_scale, max_depth) : 0.0;
    }
  }
  if (field.valid_count() == 0) throw DataError("'" + path + "': depth map has no valid pixel");
  return field;
}

inline void save_depth_png(const std::string& path, const DepthField& field, double unit_scale) {
  PngData png{field.width, field.height, 1, 16, std::vector<uint16_t>(field.size(), 0)};
  for (size_t i = 0; i < field.size(); ++i)
    if (field.valid[i]) png.samples[i] = static_cast<uint16_t>(std::clamp<long>(std::lround(field.depth[i] / unit_scale), 1L, 65535L));
  write_png(path, png);
}

inline void save_depth_pfm(const std::string& path, const DepthField& field) {
  std::vector<float> values(field.size(), std::numeric_limits<float>::quiet_NaN());
  for (size_t i = 0; i < field.size(); ++i)
    if (field.valid[i]) values[i] = static_cast<float>(field.depth[i]);
  write_pfm(path, field.width, field.height, values);
}

/// Polynomial fit of the Turbo colormap, t in [0, 1]: blue (0) to red (1).
inline std::array<float, 3> turbo(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double r = 0.13572138 + t * (4.61539260 + t * (-42.66032258 + t * (132.13108234 + t * (-152.94239396 + t * 59.28637943))));
  const double g = 0.09140261 + t * (2.19418839 + t * (4.84296658 + t * (-14.18503333 + t * (4.27729857 + t * 2.82956604))));
  const double b = 0.10667330 + t * (12.64194608 + t * (-60.58204836 + t * (110.36276771 + t * (-89.90310912 + t * 27.34824973))));
  return {static_cast<float>(std::clamp(r, 0.0, 1.0)), static_cast<float>(std::clamp(g, 0.0, 1.0)),
          static_cast<float>(std::clamp(b, 0.0, 1.0))};
}

/// Log-depth colour map, near = blue, far = red; invalid pixels black.
inline ImageRgb colorize_depth(const DepthField& field, double min_depth = 0.0, double max_depth = 0.0) {
  if (min_depth <= 0.0 || max_depth <= min_depth) {
    min_depth = std::numeric_limits<double>::infinity();
    max_depth = 0.0;
    for (size_t i = 0; i < field.size(); ++i)
      if (field.valid[i]) min_depth = std::min(min_depth, field.depth[i]), max_depth = std::max(max_depth, field.depth[i]);
    if (!(max_depth > min_depth)) max_depth = min_depth * 1.01 + 1e-6;
  }
  ImageRgb out(field.width, field.height);
  const double lo = std::log(min_depth);
  const double span = std::log(max_depth) - lo;
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const size_t i = static_cast<size_t>(y) * field.width + x;
      if (field.valid[i]) out.set_pixel(x, y, turbo((std::log(field.depth[i]) - lo) / span));
    }
  return out;
}

/// False-colour absolute error map (black where undefined).
inline ImageRgb colorize_errors(const std::vector<double>& errors, int width, int height) {
  double max_error = 0.0;
  for (double e : errors)
    if (std::isfinite(e)) max_error = std::max(max_error, e);
  ImageRgb out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double e = errors[static_cast<size_t>(y) * width + x];
      if (std::isfinite(e)) out.set_pixel(x, y, turbo(max_error > 0 ? e / max_error : 0.0));
    }
  return out;
}

/// 16-bit single-channel label map (labels must fit in 16 bits).
inline void save_label_png(const std::string& path, int width, int height, const std::vector<int>& labels) {
  PngData png{width, height, 1, 16, std::vector<uint16_t>(labels.size())};
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 65535) throw DimensionError("label does not fit in 16 bits");
    png.samples[i] = static_cast<uint16_t>(labels[i]);
  }
  write_png(path, png);
}

}  // namespace dcnf
