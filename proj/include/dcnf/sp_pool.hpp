#pragma once

// Superpixel pooling: average convolutional features over each superpixel's
// footprint after nearest-neighbour upsampling, without materialising the
// upsampled maps. Each superpixel gets L1-normalised cell frequencies W_t.

#include "dcnf/errors.hpp"
#include "dcnf/slic.hpp"
#include "dcnf/tensor.hpp"

#include <map>
#include <vector>

namespace dcnf {

struct PoolingWeights {
  struct Entry {
    int cell = 0;  // i * w + j
    double weight = 0.0;
  };
  int h = 0;
  int w = 0;
  int n = 0;
  std::vector<std::vector<Entry>> per_node;  // sorted by cell
};

/// Image pixel (row, col) of an H x W image falls into grid cell
/// (floor(row * h / H), floor(col * w / W)).
inline int grid_cell_of(int row, int col, int image_h, int image_w, int h, int w) {
  const int i = static_cast<int>(static_cast<long long>(row) * h / image_h);
  const int j = static_cast<int>(static_cast<long long>(col) * w / image_w);
  return i * w + j;
}

inline PoolingWeights build_pooling_weights(const Segmentation& seg, int h, int w) {
  if (h < 1 || w < 1) throw DimensionError("build_pooling_weights: grid must be at least 1x1");
  PoolingWeights out;
  out.h = h;
  out.w = w;
  out.n = seg.n;
  out.per_node.resize(static_cast<size_t>(seg.n));
  for (int t = 0; t < seg.n; ++t) {
    const auto& pixels = seg.pixel_lists[static_cast<size_t>(t)];
    if (pixels.empty()) throw DataError("build_pooling_weights: superpixel " + std::to_string(t) + " has no pixels");
    std::map<int, int> counts;
    for (int p : pixels) ++counts[grid_cell_of(p / seg.width, p % seg.width, seg.height, seg.width, h, w)];
    auto& entries = out.per_node[static_cast<size_t>(t)];
    const double total = static_cast<double>(pixels.size());
    for (const auto& [cell, count] : counts) entries.push_back({cell, count / total});
  }
  return out;
}

/// h_tk = sum_{(i,j)} W_ijt C_ijk. Result is node-major: out[t * d + k].
template <class Real>
std::vector<Real> pool_forward(const BasicFeatureGrid<Real>& grid, const PoolingWeights& weights) {
  if (grid.h != weights.h || grid.w != weights.w)
    throw DimensionError("pool_forward: pooling weights built for a different grid size");
  const size_t cells = static_cast<size_t>(grid.h) * grid.w;
  std::vector<Real> out(static_cast<size_t>(weights.n) * grid.d, Real(0));
  for (int t = 0; t < weights.n; ++t)
    for (int k = 0; k < grid.d; ++k) {
      double acc = 0.0;
      const Real* plane = grid.data.data() + static_cast<size_t>(k) * cells;
      for (const auto& e : weights.per_node[static_cast<size_t>(t)]) acc += e.weight * static_cast<double>(plane[e.cell]);
      out[static_cast<size_t>(t) * grid.d + k] = static_cast<Real>(acc);
    }
  return out;
}

/// Transpose of pool_forward: dC_ijk = sum_t W_ijt * upstream_tk.
template <class Real>
BasicFeatureGrid<Real> pool_backward(const std::vector<Real>& upstream, const PoolingWeights& weights, int d) {
  if (upstream.size() != static_cast<size_t>(weights.n) * static_cast<size_t>(d))
    throw DimensionError("pool_backward: upstream must hold n * d values");
  BasicFeatureGrid<Real> grad(weights.h, weights.w, d);
  const size_t cells = static_cast<size_t>(weights.h) * weights.w;
  std::vector<double> acc(cells * static_cast<size_t>(d), 0.0);
  for (int t = 0; t < weights.n; ++t)
    for (const auto& e : weights.per_node[static_cast<size_t>(t)])
      for (int k = 0; k < d; ++k)
        acc[static_cast<size_t>(k) * cells + e.cell] += e.weight * static_cast<double>(upstream[static_cast<size_t>(t) * d + k]);
  for (size_t i = 0; i < acc.size(); ++i) grad.data[i] = static_cast<Real>(acc[i]);
  return grad;
}

}  // namespace dcnf
