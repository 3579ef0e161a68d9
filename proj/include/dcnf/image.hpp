#pragma once

#include "dcnf/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace dcnf {

/// Interleaved RGB image with channel values in [0, 1].
class ImageRgb {
 public:
  static constexpr int kMinSide = 16;

  ImageRgb() = default;
  ImageRgb(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height * 3, fill) {
    if (width < 1 || height < 1) throw DimensionError("ImageRgb: non-positive size");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int pixel_count() const { return width_ * height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  std::array<float, 3> pixel(int x, int y) const {
    const size_t i = index(x, y, 0);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set_pixel(int x, int y, std::array<float, 3> rgb) {
    const size_t i = index(x, y, 0);
    data_[i] = rgb[0];
    data_[i + 1] = rgb[1];
    data_[i + 2] = rgb[2];
  }

  /// Grey level used by the texture descriptor.
  float intensity(int x, int y) const {
    const auto [r, g, b] = pixel(x, y);
    return 0.299f * r + 0.587f * g + 0.114f * b;
  }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  /// Enforces the size and value-range invariants of network/segmenter inputs.
  void validate() const {
    if (width_ < kMinSide || height_ < kMinSide)
      throw DimensionError("image must be at least " + std::to_string(kMinSide) + "x" + std::to_string(kMinSide));
    for (float v : data_)
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image values must lie in [0, 1]");
  }

  ImageRgb shifted(int dx, int dy) const {
    ImageRgb out(width_, height_);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        const int sx = x - dx;
        const int sy = y - dy;
        if (sx >= 0 && sy >= 0 && sx < width_ && sy < height_) out.set_pixel(x, y, pixel(sx, sy));
      }
    return out;
  }

 private:
  size_t index(int x, int y, int c) const {
    return (static_cast<size_t>(y) * static_cast<size_t>(width_) + static_cast<size_t>(x)) * 3 + static_cast<size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// sRGB in [0,1] to CIELAB (D65).
inline std::array<double, 3> rgb_to_lab(std::array<float, 3> rgb) {
  auto linear = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
  const double r = linear(rgb[0]);
  const double g = linear(rgb[1]);
  const double b = linear(rgb[2]);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  auto f = [](double t) { return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0; };
  const double fx = f(x);
  const double fy = f(y);
  const double fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

}  // namespace dcnf
