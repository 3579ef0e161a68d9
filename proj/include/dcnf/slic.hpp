#pragma once

// SLIC superpixels (k-means in CIELAB + xy, windowed assignment) followed by
// connectivity enforcement, plus the superpixel neighbour graph.

#include "dcnf/crf.hpp"
#include "dcnf/errors.hpp"
#include "dcnf/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <vector>

namespace dcnf {

/// Partition of the pixel grid into n non-empty superpixels labelled 0..n-1.
struct Segmentation {
  int width = 0;
  int height = 0;
  int n = 0;
  std::vector<int> label_map;                // row-major, one label per pixel
  std::vector<Point2> centroids;             // mean (x, y) of member pixels
  std::vector<std::vector<int>> pixel_lists; // row-major pixel indices per superpixel

  int label(int x, int y) const { return label_map[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }

  /// Builds centroids and pixel lists from a label map whose labels must be
  /// exactly {0, ..., n-1}. Connectivity is not required here.
  static Segmentation from_label_map(int width, int height, std::vector<int> labels) {
    if (width < 1 || height < 1) throw DimensionError("Segmentation: non-positive size");
    if (labels.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
      throw DimensionError("Segmentation: label map size mismatch");
    Segmentation seg;
    seg.width = width;
    seg.height = height;
    int max_label = -1;
    for (int l : labels) {
      if (l < 0) throw DimensionError("Segmentation: negative label");
      max_label = std::max(max_label, l);
    }
    seg.n = max_label + 1;
    seg.pixel_lists.resize(static_cast<size_t>(seg.n));
    for (size_t i = 0; i < labels.size(); ++i) seg.pixel_lists[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
    seg.centroids.resize(static_cast<size_t>(seg.n));
    for (int t = 0; t < seg.n; ++t) {
      const auto& px = seg.pixel_lists[static_cast<size_t>(t)];
      if (px.empty()) throw DimensionError("Segmentation: label " + std::to_string(t) + " has no pixels");
      double sx = 0.0;
      double sy = 0.0;
      for (int i : px) {
        sx += i % width;
        sy += i / width;
      }
      seg.centroids[static_cast<size_t>(t)] = {sx / static_cast<double>(px.size()), sy / static_cast<double>(px.size())};
    }
    seg.label_map = std::move(labels);
    return seg;
  }
};

namespace detail {

/// 4-connected components of a label map. Returns component id per pixel.
inline std::vector<int> connected_components(int width, int height, const std::vector<int>& labels, int& count) {
  std::vector<int> comp(labels.size(), -1);
  count = 0;
  std::vector<int> stack;
  for (size_t start = 0; start < labels.size(); ++start) {
    if (comp[start] >= 0) continue;
    comp[start] = count;
    stack.assign(1, static_cast<int>(start));
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      const int x = i % width;
      const int y = i / width;
      const int nbrs[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[1] < 0 || nb[0] >= width || nb[1] >= height) continue;
        const int j = nb[1] * width + nb[0];
        if (comp[static_cast<size_t>(j)] < 0 && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
          comp[static_cast<size_t>(j)] = count;
          stack.push_back(j);
        }
      }
    }
    ++count;
  }
  return comp;
}

/// Keeps the largest component of each label (if not tiny) and merges every
/// other component into its largest adjacent region. Output labels are
/// renumbered in raster order of first appearance.
inline std::vector<int> enforce_connectivity(int width, int height, const std::vector<int>& labels, int min_size) {
  int count = 0;
  const std::vector<int> comp = connected_components(width, height, labels, count);
  std::vector<int> size(static_cast<size_t>(count), 0);
  std::vector<int> comp_label(static_cast<size_t>(count), 0);
  for (size_t i = 0; i < comp.size(); ++i) {
    ++size[static_cast<size_t>(comp[i])];
    comp_label[static_cast<size_t>(comp[i])] = labels[i];
  }
  const int num_labels = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> best(static_cast<size_t>(num_labels), -1);
  for (int c = 0; c < count; ++c) {
    int& b = best[static_cast<size_t>(comp_label[static_cast<size_t>(c)])];
    if (b < 0 || size[static_cast<size_t>(c)] > size[static_cast<size_t>(b)]) b = c;
  }
  std::vector<char> kept(static_cast<size_t>(count), 0);
  bool any = false;
  for (int b : best)
    if (b >= 0 && size[static_cast<size_t>(b)] >= min_size) kept[static_cast<size_t>(b)] = 1, any = true;
  if (!any) kept[static_cast<size_t>(std::max_element(size.begin(), size.end()) - size.begin())] = 1;

  std::vector<std::set<int>> adj(static_cast<size_t>(count));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int a = comp[static_cast<size_t>(y * width + x)];
      if (x + 1 < width) {
        const int b = comp[static_cast<size_t>(y * width + x + 1)];
        if (a != b) adj[static_cast<size_t>(a)].insert(b), adj[static_cast<size_t>(b)].insert(a);
      }
      if (y + 1 < height) {
        const int b = comp[static_cast<size_t>((y + 1) * width + x)];
        if (a != b) adj[static_cast<size_t>(a)].insert(b), adj[static_cast<size_t>(b)].insert(a);
      }
    }

  std::vector<int> parent(static_cast<size_t>(count));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int c) {
    while (parent[static_cast<size_t>(c)] != c) c = parent[static_cast<size_t>(c)] = parent[static_cast<size_t>(parent[static_cast<size_t>(c)])];
    return c;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (int c = 0; c < count; ++c) {
      if (find(c) != c || kept[static_cast<size_t>(c)]) continue;
      int target = -1;
      for (int nb : adj[static_cast<size_t>(c)]) {
        const int r = find(nb);
        if (r == c) continue;
        if (target < 0 || size[static_cast<size_t>(r)] > size[static_cast<size_t>(target)] ||
            (size[static_cast<size_t>(r)] == size[static_cast<size_t>(target)] && r < target))
          target = r;
      }
      if (target < 0) {
        kept[static_cast<size_t>(c)] = 1;  // isolated region: nothing to merge with
        continue;
      }
      parent[static_cast<size_t>(c)] = target;
      size[static_cast<size_t>(target)] += size[static_cast<size_t>(c)];
      adj[static_cast<size_t>(target)].insert(adj[static_cast<size_t>(c)].begin(), adj[static_cast<size_t>(c)].end());
      adj[static_cast<size_t>(c)].clear();
      changed = true;
    }
  }

  std::vector<int> renumber(static_cast<size_t>(count), -1);
  std::vector<int> out(labels.size());
  int next = 0;
  for (size_t i = 0; i < comp.size(); ++i) {
    const int r = find(comp[i]);
    if (renumber[static_cast<size_t>(r)] < 0) renumber[static_cast<size_t>(r)] = next++;
    out[i] = renumber[static_cast<size_t>(r)];
  }
  return out;
}

}  // namespace detail

/// True if every superpixel is a single 4-connected region.
inline bool is_connected(const Segmentation& seg) {
  int count = 0;
  detail::connected_components(seg.width, seg.height, seg.label_map, count);
  return count == seg.n;
}

struct SlicOptions {
  int target_count = 100;
  double compactness = 10.0;
  int iterations = 10;

  friend bool operator==(const SlicOptions&, const SlicOptions&) = default;
};

/// SLIC over CIELAB. Deterministic; a uniform image yields a grid-like tiling.
inline Segmentation slic_segment(const ImageRgb& image, const SlicOptions& options) {
  const int width = image.width();
  const int height = image.height();
  const int num_pixels = width * height;
  if (options.target_count < 1 || options.target_count > num_pixels)
    throw ParameterError("slic: target_count must lie in [1, pixel count]");
  if (!(options.compactness > 0.0)) throw ParameterError("slic: compactness must be positive");

  std::vector<std::array<double, 3>> lab(static_cast<size_t>(num_pixels));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) lab[static_cast<size_t>(y * width + x)] = rgb_to_lab(image.pixel(x, y));

  const double step = std::sqrt(static_cast<double>(num_pixels) / options.target_count);
  const int nx = std::clamp(static_cast<int>(std::lround(width / step)), 1, width);
  const int ny = std::clamp(static_cast<int>(std::lround(height / step)), 1, height);

  struct Center {
    std::array<double, 3> lab;
    double x, y;
  };
  auto color_gradient = [&](int x, int y) {
    if (x < 1 || y < 1 || x >= width - 1 || y >= height - 1) return std::numeric_limits<double>::infinity();
    double g = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double dx = lab[static_cast<size_t>(y * width + x + 1)][static_cast<size_t>(c)] - lab[static_cast<size_t>(y * width + x - 1)][static_cast<size_t>(c)];
      const double dy = lab[static_cast<size_t>((y + 1) * width + x)][static_cast<size_t>(c)] - lab[static_cast<size_t>((y - 1) * width + x)][static_cast<size_t>(c)];
      g += dx * dx + dy * dy;
    }
    return g;
  };

  std::vector<Center> centers;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int cx = std::min(width - 1, static_cast<int>((i + 0.5) * width / nx));
      int cy = std::min(height - 1, static_cast<int>((j + 0.5) * height / ny));
      if (step >= 3.0) {
        double best = color_gradient(cx, cy);
        int bx = cx;
        int by = cy;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const double g = color_gradient(cx + dx, cy + dy);
            if (g < best) best = g, bx = cx + dx, by = cy + dy;
          }
        cx = bx;
        cy = by;
      }
      centers.push_back({lab[static_cast<size_t>(cy * width + cx)], static_cast<double>(cx), static_cast<double>(cy)});
    }

  const int half_window = static_cast<int>(std::ceil(std::max(static_cast<double>(width) / nx, static_cast<double>(height) / ny)));
  const double spatial_weight = (options.compactness / step) * (options.compactness / step);
  std::vector<int> labels(static_cast<size_t>(num_pixels), -1);
  std::vector<double> dist(static_cast<size_t>(num_pixels));

  auto distance = [&](const Center& c, int x, int y) {
    const auto& p = lab[static_cast<size_t>(y * width + x)];
    const double dl = p[0] - c.lab[0];
    const double da = p[1] - c.lab[1];
    const double db = p[2] - c.lab[2];
    const double sx = x - c.x;
    const double sy = y - c.y;
    return dl * dl + da * da + db * db + spatial_weight * (sx * sx + sy * sy);
  };

  for (int iter = 0; iter < std::max(1, options.iterations); ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const int x0 = std::max(0, static_cast<int>(c.x) - half_window);
      const int x1 = std::min(width - 1, static_cast<int>(c.x) + half_window);
      const int y0 = std::max(0, static_cast<int>(c.y) - half_window);
      const int y1 = std::min(height - 1, static_cast<int>(c.y) + half_window);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double d = distance(c, x, y);
          const size_t i = static_cast<size_t>(y * width + x);
          if (d < dist[i]) dist[i] = d, labels[i] = static_cast<int>(k);
        }
    }
    std::vector<std::array<double, 5>> sums(centers.size(), {0, 0, 0, 0, 0});
    std::vector<int> counts(centers.size(), 0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const size_t i = static_cast<size_t>(y * width + x);
        if (labels[i] < 0) continue;
        auto& s = sums[static_cast<size_t>(labels[i])];
        s[0] += lab[i][0];
        s[1] += lab[i][1];
        s[2] += lab[i][2];
        s[3] += x;
        s[4] += y;
        ++counts[static_cast<size_t>(labels[i])];
      }
    for (size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / counts[k];
      centers[k] = {{sums[k][0] * inv, sums[k][1] * inv, sums[k][2] * inv}, sums[k][3] * inv, sums[k][4] * inv};
    }
  }
  // Pixels outside every window fall back to the globally nearest centre.
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const size_t i = static_cast<size_t>(y * width + x);
      if (labels[i] >= 0) continue;
      double best = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < centers.size(); ++k) {
        const double d = distance(centers[k], x, y);
        if (d < best) best = d, labels[i] = static_cast<int>(k);
      }
    }

  const int min_size = std::max(1, num_pixels / options.target_count / 4);
  return Segmentation::from_label_map(width, height, detail::enforce_connectivity(width, height, labels, min_size));
}

/// Unordered, deduplicated pairs of 4-adjacent superpixels, sorted.
inline std::vector<Edge> adjacency_edges(const Segmentation& seg) {
  std::set<Edge> edges;
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x) {
      const int a = seg.label(x, y);
      if (x + 1 < seg.width) {
        const int b = seg.label(x + 1, y);
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
      }
      if (y + 1 < seg.height) {
        const int b = seg.label(x, y + 1);
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
      }
    }
  return {edges.begin(), edges.end()};
}

}  // namespace dcnf
