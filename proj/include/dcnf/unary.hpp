#pragma once

// Unary networks regressing a log-depth z_p per superpixel.
//
//  dcnf: one evaluation per superpixel on a patch cropped around its centroid
//        (conv/pool feature extractor + dense 64 ReLU, 16 logistic, 1 linear).
//  fcsp: one fully convolutional pass per image, superpixel pooling of the
//        feature grid, then the same dense head shared over superpixels.

#include "dcnf/crf.hpp"
#include "dcnf/image.hpp"
#include "dcnf/nn.hpp"
#include "dcnf/slic.hpp"
#include "dcnf/sp_pool.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace dcnf {

enum class ModelPath { dcnf, fcsp };

inline const char* to_string(ModelPath path) { return path == ModelPath::dcnf ? "dcnf" : "fcsp"; }

inline ModelPath model_path_from_string(const std::string& s) {
  if (s == "dcnf") return ModelPath::dcnf;
  if (s == "fcsp") return ModelPath::fcsp;
  throw ParameterError("unknown model path '" + s + "' (expected dcnf or fcsp)");
}

/// Square RGB patches, one per superpixel, stored CHW back to back.
struct PatchBatch {
  int side = 0;
  int count = 0;
  std::vector<float> data;

  Shape shape() const { return {3, side, side}; }
  std::span<const float> patch(int i) const {
    const size_t len = shape().size();
    return std::span<const float>(data).subspan(static_cast<size_t>(i) * len, len);
  }
};

/// Subtracted from every [0,1] channel value before the network sees it.
inline constexpr float kInputOffset = 0.5f;

inline std::vector<float> image_to_chw(const ImageRgb& image) {
  const size_t plane = static_cast<size_t>(image.pixel_count());
  std::vector<float> out(plane * 3);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * image.width() + x] = image.at(x, y, c) - kInputOffset;
  return out;
}

/// box_side x box_side crop whose top-left corner is round(center) - box_side/2,
/// zero outside the image (after the input offset). CHW layout.
inline std::vector<float> crop_patch(const ImageRgb& image, Point2 center, int box_side) {
  const int x0 = static_cast<int>(std::lround(center.x)) - box_side / 2;
  const int y0 = static_cast<int>(std::lround(center.y)) - box_side / 2;
  const size_t plane = static_cast<size_t>(box_side) * box_side;
  std::vector<float> out(plane * 3, 0.0f);
  for (int v = 0; v < box_side; ++v) {
    const int y = y0 + v;
    if (y < 0 || y >= image.height()) continue;
    for (int u = 0; u < box_side; ++u) {
      const int x = x0 + u;
      if (x < 0 || x >= image.width()) continue;
      for (int c = 0; c < 3; ++c) out[static_cast<size_t>(c) * plane + static_cast<size_t>(v) * box_side + u] = image.at(x, y, c) - kInputOffset;
    }
  }
  return out;
}

/// Bilinear resize of a CHW square plane stack (half-pixel centres, edge clamp).
inline std::vector<float> resize_bilinear(const std::vector<float>& chw, int channels, int side, int out_side) {
  if (side == out_side) return chw;
  std::vector<float> out(static_cast<size_t>(channels) * out_side * out_side);
  const double scale = static_cast<double>(side) / out_side;
  for (int oy = 0; oy < out_side; ++oy) {
    const double sy = std::clamp((oy + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_side; ++ox) {
      const double sx = std::clamp((ox + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - x0;
      for (int c = 0; c < channels; ++c) {
        const float* p = chw.data() + static_cast<size_t>(c) * side * side;
        const double v = (1 - fy) * ((1 - fx) * p[y0 * side + x0] + fx * p[y0 * side + x1]) +
                         fy * ((1 - fx) * p[y1 * side + x0] + fx * p[y1 * side + x1]);
        out[(static_cast<size_t>(c) * out_side + oy) * out_side + ox] = static_cast<float>(v);
      }
    }
  }
  return out;
}

inline PatchBatch extract_patches(const ImageRgb& image, const Segmentation& seg, int box_side, int resize_to) {
  if (box_side < 8) throw ParameterError("extract_patches: box_side must be >= 8");
  if (resize_to < 1) throw ParameterError("extract_patches: resize_to must be >= 1");
  PatchBatch batch;
  batch.side = resize_to;
  batch.count = seg.n;
  batch.data.reserve(static_cast<size_t>(seg.n) * batch.shape().size());
  for (int t = 0; t < seg.n; ++t) {
    auto patch = resize_bilinear(crop_patch(image, seg.centroids[static_cast<size_t>(t)], box_side), 3, box_side, resize_to);
    batch.data.insert(batch.data.end(), patch.begin(), patch.end());
  }
  return batch;
}

/// Patch box side for an image, scaled down from the indoor (168 px at a
/// 480-row reference) or outdoor (120 px at 345 rows) preset.
inline int preset_box_side(const std::string& preset, int width, int height) {
  const bool outdoor = preset == "outdoor";
  if (!outdoor && preset != "indoor") throw ParameterError("preset must be indoor or outdoor");
  const double box = outdoor ? 120.0 : 168.0;
  const double reference = outdoor ? 345.0 : 480.0;
  const double scale = std::min(1.0, std::min(width, height) / reference);
  return std::max(8, static_cast<int>(std::lround(box * scale)));
}

template <class Real>
struct BasicUnaryModel {
  using Scalar = Real;
  ModelPath path = ModelPath::dcnf;
  Network<Real> backbone;  // dcnf: whole patch regressor; fcsp: convolutional part
  Network<Real> head;      // fcsp only

  int patch_side() const { return backbone.input_shape().h; }
  int feature_channels() const { return backbone.output_shape().c; }

  size_t num_params() const { return backbone.num_params() + (path == ModelPath::fcsp ? head.num_params() : 0); }

  template <class Other>
  BasicUnaryModel<Other> cast() const {
    BasicUnaryModel<Other> out;
    out.path = path;
    out.backbone = backbone.template cast<Other>();
    if (path == ModelPath::fcsp) out.head = head.template cast<Other>();
    return out;
  }

  std::vector<const Network<Real>*> networks() const {
    if (path == ModelPath::fcsp) return {&backbone, &head};
    return {&backbone};
  }

  /// Parametric layers in θ order as (network index, layer index).
  std::vector<std::pair<int, size_t>> parametric_layers() const {
    std::vector<std::pair<int, size_t>> out;
    const auto nets = networks();
    for (size_t n = 0; n < nets.size(); ++n)
      for (size_t l = 0; l < nets[n]->num_layers(); ++l)
        if (nets[n]->layers()[l].has_params()) out.emplace_back(static_cast<int>(n), l);
    return out;
  }

  std::vector<Real> parameters() const {
    std::vector<Real> theta;
    theta.reserve(num_params());
    for (const auto* net : networks()) theta.insert(theta.end(), net->params().begin(), net->params().end());
    return theta;
  }

  void set_parameters(std::span<const Real> theta) {
    if (theta.size() != num_params()) throw DimensionError("set_parameters: θ length mismatch");
    auto b = backbone.params();
    std::copy_n(theta.begin(), b.size(), b.begin());
    if (path == ModelPath::fcsp) {
      auto h = head.params();
      std::copy(theta.begin() + static_cast<std::ptrdiff_t>(b.size()), theta.end(), h.begin());
    }
  }

  /// θ offset of a parametric layer.
  size_t theta_offset(int net, size_t layer) const {
    return (net == 0 ? 0 : backbone.num_params()) + (net == 0 ? backbone : head).param_offset(layer);
  }

  void init(uint64_t seed) {
    backbone.init_glorot(seed);
    if (path == ModelPath::fcsp) head.init_glorot(seed ^ 0x9e3779b97f4a7c15ULL);
  }

  void validate() const {
    if (path == ModelPath::dcnf) {
      if (backbone.output_shape() != Shape{1, 1, 1}) throw DimensionError("dcnf model must end in a single output");
      if (backbone.input_shape().c != 3 || backbone.input_shape().h != backbone.input_shape().w)
        throw DimensionError("dcnf model input must be 3 x s x s");
    } else {
      if (!backbone.is_convolutional()) throw DimensionError("fcsp backbone must be convolutional (no dense layers)");
      if (head.input_shape().size() != static_cast<size_t>(backbone.output_shape().c))
        throw DimensionError("fcsp head input width must equal backbone channel count d");
      if (head.output_shape() != Shape{1, 1, 1}) throw DimensionError("fcsp head must end in a single output");
    }
  }
};

using UnaryModel = BasicUnaryModel<float>;

inline std::vector<LayerSpec> default_head_layers() {
  return {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(16), LayerSpec::logistic(), LayerSpec::dense(1)};
}

/// conv 8 -> pool -> conv 16 -> pool -> dense 64 -> 16 -> 1 on side x side patches.
inline UnaryModel default_dcnf_model(int patch_side = 32, uint64_t seed = 1) {
  std::vector<LayerSpec> layers = {LayerSpec::conv(8, 3, 1, 1),  LayerSpec::relu(), LayerSpec::max_pool(2),
                                   LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::max_pool(2)};
  for (const auto& l : default_head_layers()) layers.push_back(l);
  UnaryModel model;
  model.path = ModelPath::dcnf;
  model.backbone = Network<float>({3, patch_side, patch_side}, layers);
  model.init(seed);
  return model;
}

/// conv 8 -> pool -> conv 16 -> conv d, then head dense 64 -> 16 -> 1.
inline UnaryModel default_fcsp_model(int d = 32, uint64_t seed = 1) {
  UnaryModel model;
  model.path = ModelPath::fcsp;
  model.backbone = Network<float>({3, 64, 64}, {LayerSpec::conv(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::max_pool(2),
                                                LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(),
                                                LayerSpec::conv(d, 3, 1, 1), LayerSpec::relu()});
  model.head = Network<float>({d, 1, 1}, default_head_layers());
  model.init(seed);
  return model;
}

/// Activations kept between a unary forward and its backward.
template <class Real>
struct BasicUnaryCache {
  ModelPath path = ModelPath::dcnf;
  bool filled = false;
  std::vector<typename Network<Real>::Trace> node_traces;  // per patch (dcnf) or per pooled vector (fcsp head)
  typename Network<Real>::Trace grid_trace;                // fcsp backbone
  PoolingWeights weights;                          // fcsp
  int grid_channels = 0;
};

using UnaryCache = BasicUnaryCache<float>;

template <class Real>
Vector unary_forward_patches(const BasicUnaryModel<Real>& model, const PatchBatch& patches, BasicUnaryCache<Real>& cache) {
  if (model.path != ModelPath::dcnf) throw StateError("unary_forward_patches needs a dcnf model");
  if (patches.shape() != model.backbone.input_shape())
    throw DimensionError("patch shape " + patches.shape().str() + " does not match model input " +
                         model.backbone.input_shape().str());
  cache.path = ModelPath::dcnf;
  cache.node_traces.resize(static_cast<size_t>(patches.count));
  Vector z(patches.count);
  std::vector<Real> input;
  for (int t = 0; t < patches.count; ++t) {
    const auto patch = patches.patch(t);
    input.assign(patch.begin(), patch.end());
    z[t] = static_cast<double>(model.backbone.forward(input, patches.shape(), cache.node_traces[static_cast<size_t>(t)])[0]);
  }
  cache.filled = true;
  return z;
}

/// Fully convolutional pass over a whole image.
template <class Real>
BasicFeatureGrid<Real> fcn_forward(const BasicUnaryModel<Real>& model, const ImageRgb& image,
                                   typename Network<Real>::Trace* trace = nullptr) {
  if (!model.backbone.is_convolutional()) throw StateError("fcn_forward needs a convolutional backbone");
  typename Network<Real>::Trace local;
  auto& tr = trace ? *trace : local;
  const Shape in{3, image.height(), image.width()};
  const auto chw = image_to_chw(image);
  const std::vector<Real> input(chw.begin(), chw.end());
  const auto out = model.backbone.forward(input, in, tr);
  const Shape& s = tr.shapes.back();
  BasicFeatureGrid<Real> grid(s.h, s.w, s.c, std::max(1, static_cast<int>(std::lround(static_cast<double>(image.height()) / s.h))));
  std::copy(out.begin(), out.end(), grid.data.begin());
  return grid;
}

/// Dense head on each pooled d-vector (node-major layout).
template <class Real>
Vector fcn_head_forward(const Network<Real>& head, const std::vector<Real>& pooled,
                        std::vector<typename Network<Real>::Trace>* traces = nullptr) {
  const size_t d = head.input_shape().size();
  if (d == 0 || pooled.size() % d != 0) throw DimensionError("fcn_head_forward: pooled length is not a multiple of d");
  const int n = static_cast<int>(pooled.size() / d);
  std::vector<typename Network<Real>::Trace> local;
  auto& tr = traces ? *traces : local;
  tr.resize(static_cast<size_t>(n));
  Vector z(n);
  for (int t = 0; t < n; ++t)
    z[t] = head.forward(std::span<const Real>(pooled).subspan(static_cast<size_t>(t) * d, d), head.input_shape(),
                        tr[static_cast<size_t>(t)])[0];
  return z;
}

template <class Real>
Vector unary_forward_fcsp(const BasicUnaryModel<Real>& model, const ImageRgb& image, const PoolingWeights& weights,
                          BasicUnaryCache<Real>& cache) {
  if (model.path != ModelPath::fcsp) throw StateError("unary_forward_fcsp needs an fcsp model");
  cache.path = ModelPath::fcsp;
  const BasicFeatureGrid<Real> grid = fcn_forward(model, image, &cache.grid_trace);
  cache.weights = weights;
  cache.grid_channels = grid.d;
  const Vector z = fcn_head_forward(model.head, pool_forward(grid, weights), &cache.node_traces);
  cache.filled = true;
  return z;
}

/// d(upstream . z)/dθ, θ laid out as backbone then head parameters.
template <class Real>
std::vector<double> unary_backward(const BasicUnaryModel<Real>& model, const BasicUnaryCache<Real>& cache,
                                   const Vector& upstream) {
  if (!cache.filled) throw StateError("unary_backward called before a forward pass");
  if (cache.path != model.path) throw StateError("unary_backward: cache was filled by a different model path");
  if (upstream.size() != static_cast<Eigen::Index>(cache.node_traces.size()))
    throw DimensionError("unary_backward: upstream length differs from node count");
  std::vector<double> grad(model.num_params(), 0.0);
  if (model.path == ModelPath::dcnf) {
    for (size_t t = 0; t < cache.node_traces.size(); ++t) {
      const Real g = static_cast<Real>(upstream[static_cast<Eigen::Index>(t)]);
      if (g == Real(0)) continue;
      model.backbone.backward(cache.node_traces[t], std::span<const Real>(&g, 1), grad);
    }
    return grad;
  }
  const size_t nb = model.backbone.num_params();
  std::span<double> head_grad = std::span<double>(grad).subspan(nb);
  const int d = cache.grid_channels;
  std::vector<Real> pooled_grad(cache.node_traces.size() * static_cast<size_t>(d), Real(0));
  std::vector<Real> g_in;
  for (size_t t = 0; t < cache.node_traces.size(); ++t) {
    const Real g = static_cast<Real>(upstream[static_cast<Eigen::Index>(t)]);
    if (g == Real(0)) continue;
    model.head.backward(cache.node_traces[t], std::span<const Real>(&g, 1), head_grad, &g_in);
    std::copy(g_in.begin(), g_in.end(), pooled_grad.begin() + static_cast<std::ptrdiff_t>(t * static_cast<size_t>(d)));
  }
  const BasicFeatureGrid<Real> grid_grad = pool_backward(pooled_grad, cache.weights, d);
  model.backbone.backward(cache.grid_trace, grid_grad.data, std::span<double>(grad).subspan(0, nb));
  return grad;
}

}  // namespace dcnf
