#pragma once

#include "dcnf/errors.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace dcnf {

/// Channels x height x width; dense vectors are (features, 1, 1).
struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  size_t size() const { return static_cast<size_t>(c) * static_cast<size_t>(h) * static_cast<size_t>(w); }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const { return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w); }
};

/// h x w x d convolutional output. Stored channel-major (d planes of h*w) so
/// it can be fed straight back into a network's backward pass.
template <class Real>
struct BasicFeatureGrid {
  int h = 0;
  int w = 0;
  int d = 0;
  int stride = 1;  // input pixels per grid cell
  std::vector<Real> data;

  BasicFeatureGrid() = default;
  BasicFeatureGrid(int h_, int w_, int d_, int stride_ = 1)
      : h(h_), w(w_), d(d_), stride(stride_), data(static_cast<size_t>(h_) * w_ * d_, Real(0)) {
    if (h < 1 || w < 1 || d < 1 || stride < 1) throw DimensionError("FeatureGrid: dimensions must be >= 1");
  }

  Real& at(int i, int j, int k) { return data[(static_cast<size_t>(k) * h + i) * w + j]; }
  Real at(int i, int j, int k) const { return data[(static_cast<size_t>(k) * h + i) * w + j]; }
  int cells() const { return h * w; }
  Shape shape() const { return {d, h, w}; }
};

using FeatureGrid = BasicFeatureGrid<float>;

}  // namespace dcnf
