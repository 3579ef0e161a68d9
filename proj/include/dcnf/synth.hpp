#pragma once

// Synthetic scenes with analytic depth: a far back wall, a receding ground
// plane below a horizon and a few fronto-parallel coloured rectangles. Colour
// is tied to depth (ground shade by row, rectangle hue by distance) so the
// depth is recoverable from local appearance. Surfaces carry distinct
// periodic textures (plain wall, striped ground, patterned rectangles).

#include "dcnf/image.hpp"
#include "dcnf/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dcnf {

struct SyntheticScene {
  ImageRgb image;
  DepthField depth;
};

struct SyntheticOptions {
  int width = 64;
  int height = 64;
  // Tabletop scale, meters.
  double wall_depth = 2.0;
  double ground_far = 1.8;
  double ground_near = 0.9;
  double rect_min_depth = 0.6;
  double rect_max_depth = 1.6;
  int min_rects = 2;
  int max_rects = 4;
  double texture = 0.02;  // pattern amplitude
  double noise = 0.0;     // Gaussian pixel noise sigma
};

namespace detail {

/// +-1 pattern: 0 plain, 1 horizontal stripes, 2 vertical stripes,
/// 3 checkerboard, 4 diagonal stripes; period 4 pixels.
inline float texture_sign(int pattern, int x, int y) {
  switch (pattern) {
    case 1: return (y / 2) % 2 ? 1.0f : -1.0f;
    case 2: return (x / 2) % 2 ? 1.0f : -1.0f;
    case 3: return ((x / 2) + (y / 2)) % 2 ? 1.0f : -1.0f;
    case 4: return ((x + y) / 2) % 2 ? 1.0f : -1.0f;
    default: return 0.0f;
  }
}

}  // namespace detail

inline SyntheticScene generate_scene(uint64_t seed, const SyntheticOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int w = opt.width;
  const int h = opt.height;
  SyntheticScene scene{ImageRgb(w, h), DepthField(w, h, opt.wall_depth)};

  const int horizon = static_cast<int>(h * (0.45 + 0.1 * uni(rng)));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y < horizon) {
        scene.image.set_pixel(x, y, {0.55f, 0.6f, 0.75f});
        scene.depth.at(x, y) = opt.wall_depth;
      } else {
        const double t = static_cast<double>(y - horizon) / std::max(1, h - 1 - horizon);
        const double log_d = std::log(opt.ground_far) + t * (std::log(opt.ground_near) - std::log(opt.ground_far));
        scene.depth.at(x, y) = std::exp(log_d);
        const float tex = static_cast<float>(opt.texture) * detail::texture_sign(1, x, y);
        scene.image.set_pixel(x, y, {static_cast<float>(0.35 + 0.4 * t) + tex, static_cast<float>(0.55 - 0.2 * t) + tex, 0.25f + tex});
      }
    }
  }

  struct Rect {
    int x0, y0, x1, y1;
    double depth;
    int pattern;
  };
  std::vector<Rect> rects;
  const int count = opt.min_rects + static_cast<int>(uni(rng) * (opt.max_rects - opt.min_rects + 1));
  for (int i = 0; i < count; ++i) {
    const int rw = static_cast<int>(w * (0.15 + 0.2 * uni(rng)));
    const int rh = static_cast<int>(h * (0.15 + 0.2 * uni(rng)));
    const int x0 = static_cast<int>(uni(rng) * (w - rw));
    const int y0 = static_cast<int>(uni(rng) * (h - rh));
    const double depth = opt.rect_min_depth + uni(rng) * (opt.rect_max_depth - opt.rect_min_depth);
    rects.push_back({x0, y0, x0 + rw, y0 + rh, depth, 2 + i % 3});
  }
  // Far to near so nearer rectangles occlude.
  std::sort(rects.begin(), rects.end(), [](const Rect& a, const Rect& b) { return a.depth > b.depth; });
  for (const Rect& r : rects) {
    const double t = (r.depth - opt.rect_min_depth) / (opt.rect_max_depth - opt.rect_min_depth);
    const std::array<float, 3> color = {static_cast<float>(0.95 - 0.8 * t), 0.3f, static_cast<float>(0.15 + 0.8 * t)};
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        const float tex = static_cast<float>(opt.texture) * detail::texture_sign(r.pattern, x - r.x0, y - r.y0);
        scene.image.set_pixel(x, y, {color[0] + tex, color[1] + tex, color[2] + tex});
        scene.depth.at(x, y) = r.depth;
      }
  }

  std::normal_distribution<double> noise(0.0, opt.noise > 0.0 ? opt.noise : 1.0);
  for (float& v : scene.image.data())
    v = static_cast<float>(std::clamp(v + (opt.noise > 0.0 ? noise(rng) : 0.0), 0.0, 1.0));
  return scene;
}

/// Scene `index` of the built-in dataset with the given seed.
inline SyntheticScene synthetic_dataset_scene(uint64_t dataset_seed, bool test_split, int index,
                                              const SyntheticOptions& opt = {}) {
  return generate_scene(dataset_seed * 1000003ULL + (test_split ? 500000ULL : 0ULL) + static_cast<uint64_t>(index), opt);
}

}  // namespace dcnf
