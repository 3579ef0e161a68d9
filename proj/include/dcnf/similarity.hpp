#pragma once

// Pairwise observations for the CRF: per-superpixel colour, colour histogram
// and LBP texture descriptors, turned into similarities exp(-gamma * ||s_p - s_q||).

#include "dcnf/crf.hpp"
#include "dcnf/image.hpp"
#include "dcnf/slic.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace dcnf {

struct LbpOptions {
  int neighbors = 8;
  double radius = 1.0;

  friend bool operator==(const LbpOptions&, const LbpOptions&) = default;
};

struct SimilarityConfig {
  // Order: mean colour, colour histogram, LBP histogram.
  std::array<double, 3> gamma = {30.0, 10.0, 10.0};
  int histogram_bins = 10;
  LbpOptions lbp;

  friend bool operator==(const SimilarityConfig&, const SimilarityConfig&) = default;

  void validate() const {
    for (double g : gamma)
      if (!(g > 0.0) || !std::isfinite(g)) throw ParameterError("similarity gamma must be positive");
    if (histogram_bins < 2) throw ParameterError("histogram_bins must be >= 2");
    if (lbp.neighbors < 1 || lbp.neighbors > 16) throw ParameterError("lbp.neighbors must lie in [1, 16]");
    if (!(lbp.radius > 0.0)) throw ParameterError("lbp.radius must be positive");
  }
};

inline constexpr int kNumSimilarityChannels = 3;

struct NodeDescriptors {
  std::vector<std::vector<double>> mean_color;       // 3 values per node
  std::vector<std::vector<double>> color_histogram;  // 3 * bins, each channel block L1-normalised
  std::vector<std::vector<double>> lbp_histogram;    // 2^neighbors bins, L1-normalised

  const std::vector<std::vector<double>>& channel(int k) const {
    switch (k) {
      case 0: return mean_color;
      case 1: return color_histogram;
      default: return lbp_histogram;
    }
  }
};

/// LBP code per pixel; -1 where the sampling circle leaves the image.
/// A neighbour sets its bit when its grey level is >= the centre's, so flat
/// regions map to the all-ones code.
inline std::vector<int> lbp_codes(const ImageRgb& image, const LbpOptions& options) {
  const int w = image.width();
  const int h = image.height();
  const int margin = static_cast<int>(std::ceil(options.radius));
  std::vector<float> grey(static_cast<size_t>(w * h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) grey[static_cast<size_t>(y * w + x)] = image.intensity(x, y);
  auto at = [&](int x, int y) { return static_cast<double>(grey[static_cast<size_t>(y * w + x)]); };

  std::vector<std::array<double, 2>> offsets;
  for (int i = 0; i < options.neighbors; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / options.neighbors;
    double dx = options.radius * std::cos(angle);
    double dy = -options.radius * std::sin(angle);
    if (std::abs(dx) < 1e-9) dx = 0.0;
    if (std::abs(dy) < 1e-9) dy = 0.0;
    offsets.push_back({dx, dy});
  }
  std::vector<int> codes(static_cast<size_t>(w * h), -1);
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x) {
      const double center = at(x, y);
      int code = 0;
      for (size_t i = 0; i < offsets.size(); ++i) {
        const double sx = x + offsets[i][0];
        const double sy = y + offsets[i][1];
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0;
        const double fy = sy - y0;
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double v = (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x1, y0) + (1 - fx) * fy * at(x0, y1) +
                         fx * fy * at(x1, y1);
        // Small tolerance so interpolated flat regions still compare as equal.
        if (v >= center - 1e-7) code |= 1 << i;
      }
      codes[static_cast<size_t>(y * w + x)] = code;
    }
  return codes;
}

inline NodeDescriptors node_descriptors(const ImageRgb& image, const Segmentation& seg, const SimilarityConfig& cfg) {
  cfg.validate();
  if (image.width() != seg.width || image.height() != seg.height)
    throw DimensionError("node_descriptors: image and segmentation sizes differ");
  const int bins = cfg.histogram_bins;
  const int lbp_bins = 1 << cfg.lbp.neighbors;
  const std::vector<int> codes = lbp_codes(image, cfg.lbp);

  NodeDescriptors out;
  out.mean_color.resize(static_cast<size_t>(seg.n));
  out.color_histogram.resize(static_cast<size_t>(seg.n));
  out.lbp_histogram.resize(static_cast<size_t>(seg.n));
  for (int t = 0; t < seg.n; ++t) {
    const auto& pixels = seg.pixel_lists[static_cast<size_t>(t)];
    std::vector<double> mean(3, 0.0);
    std::vector<double> hist(static_cast<size_t>(3 * bins), 0.0);
    std::vector<double> lbp(static_cast<size_t>(lbp_bins), 0.0);
    int lbp_count = 0;
    for (int i : pixels) {
      const auto rgb = image.pixel(i % seg.width, i / seg.width);
      for (int c = 0; c < 3; ++c) {
        mean[static_cast<size_t>(c)] += rgb[static_cast<size_t>(c)];
        const int b = std::clamp(static_cast<int>(rgb[static_cast<size_t>(c)] * bins), 0, bins - 1);
        hist[static_cast<size_t>(c * bins + b)] += 1.0;
      }
      const int code = codes[static_cast<size_t>(i)];
      if (code >= 0) {
        lbp[static_cast<size_t>(code)] += 1.0;
        ++lbp_count;
      }
    }
    const double inv = 1.0 / static_cast<double>(pixels.size());
    for (double& m : mean) m *= inv;
    for (double& v : hist) v *= inv;  // each channel block sums to 1
    if (lbp_count > 0) {
      for (double& v : lbp) v /= lbp_count;
    } else {
      std::fill(lbp.begin(), lbp.end(), 1.0 / lbp_bins);
    }
    out.mean_color[static_cast<size_t>(t)] = std::move(mean);
    out.color_histogram[static_cast<size_t>(t)] = std::move(hist);
    out.lbp_histogram[static_cast<size_t>(t)] = std::move(lbp);
  }
  return out;
}

/// S = exp(-gamma ||a - b||_2), kept strictly positive.
inline double similarity(const std::vector<double>& a, const std::vector<double>& b, double gamma) {
  double sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::max(std::exp(-gamma * std::sqrt(sq)), std::numeric_limits<double>::min());
}

/// Graph over the given descriptors and edge set (K = 3 channels).
inline CrfGraph graph_from_descriptors(int n, std::vector<Edge> edges, const NodeDescriptors& desc,
                                       const SimilarityConfig& cfg, std::vector<Point2> centroids = {}) {
  CrfGraph graph;
  graph.n = n;
  graph.edges = std::move(edges);
  graph.centroids = std::move(centroids);
  graph.similarities.assign(kNumSimilarityChannels, std::vector<double>(graph.edges.size()));
  for (int k = 0; k < kNumSimilarityChannels; ++k) {
    const auto& feats = desc.channel(k);
    for (size_t e = 0; e < graph.edges.size(); ++e)
      graph.similarities[static_cast<size_t>(k)][e] =
          similarity(feats[static_cast<size_t>(graph.edges[e].p)], feats[static_cast<size_t>(graph.edges[e].q)], cfg.gamma[static_cast<size_t>(k)]);
  }
  graph.validate();
  return graph;
}

inline CrfGraph build_graph(const ImageRgb& image, const Segmentation& seg, const SimilarityConfig& cfg) {
  return graph_from_descriptors(seg.n, adjacency_edges(seg), node_descriptors(image, seg, cfg), cfg, seg.centroids);
}

}  // namespace dcnf
