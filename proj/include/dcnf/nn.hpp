#pragma once

// Minimal feed-forward network: conv / max-pool / dense / ReLU / logistic
// layers over CHW tensors, with exact backpropagation. Templated on the
// scalar type; training runs in float, parameter gradients accumulate in
// double.

#include "dcnf/errors.hpp"
#include "dcnf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dcnf {

enum class LayerKind { conv, max_pool, dense, relu, logistic };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::logistic: return "logistic";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::conv, LayerKind::max_pool, LayerKind::dense, LayerKind::relu, LayerKind::logistic})
    if (s == to_string(k)) return k;
  throw DataError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int outputs = 0;  // conv: output channels, dense: output features
  int kernel = 0;   // conv kernel side, pool window side
  int stride = 1;
  int padding = 0;

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = 0) {
    return {LayerKind::conv, out_channels, kernel, stride, padding};
  }
  static LayerSpec dense(int out_features) { return {LayerKind::dense, out_features, 0, 1, 0}; }
  static LayerSpec max_pool(int size = 2) { return {LayerKind::max_pool, 0, size, size, 0}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec logistic() { return {LayerKind::logistic}; }

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::dense; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Output shape of one layer, or DimensionError if the input is too small.
inline Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::conv: {
      const int h = (in.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      const int w = (in.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      if (in.h + 2 * spec.padding < spec.kernel || in.w + 2 * spec.padding < spec.kernel || h < 1 || w < 1)
        throw DimensionError("conv: input " + in.str() + " smaller than the receptive field");
      return {spec.outputs, h, w};
    }
    case LayerKind::max_pool: {
      const int h = in.h / spec.kernel;
      const int w = in.w / spec.kernel;
      if (h < 1 || w < 1) throw DimensionError("max_pool: input " + in.str() + " smaller than the window");
      return {in.c, h, w};
    }
    case LayerKind::dense: return {spec.outputs, 1, 1};
    case LayerKind::relu:
    case LayerKind::logistic: return in;
  }
  return in;
}

template <class Real>
class Network {
 public:
  /// Per-evaluation activations: values[0] is the input, values[l + 1] the
  /// output of layer l.
  struct Trace {
    std::vector<Shape> shapes;
    std::vector<std::vector<Real>> values;
    bool filled = false;

    std::span<const Real> output() const { return values.back(); }
  };

  Network() = default;

  /// `input` fixes the channel count and, for dense layers, the flattened
  /// width. Convolutional prefixes accept any spatial size at run time.
  Network(Shape input, std::vector<LayerSpec> layers) : input_(input), layers_(std::move(layers)) {
    Shape s = input_;
    size_t offset = 0;
    for (const LayerSpec& spec : layers_) {
      if (spec.kind == LayerKind::conv && (spec.outputs < 1 || spec.kernel < 1 || spec.stride < 1 || spec.padding < 0))
        throw DimensionError("conv: invalid layer spec");
      if (spec.kind == LayerKind::dense && spec.outputs < 1) throw DimensionError("dense: invalid output width");
      if (spec.kind == LayerKind::max_pool && spec.kernel < 1) throw DimensionError("max_pool: invalid window");
      offsets_.push_back(offset);
      in_shapes_.push_back(s);
      size_t count = 0;
      if (spec.kind == LayerKind::conv)
        count = static_cast<size_t>(spec.outputs) * s.c * spec.kernel * spec.kernel + static_cast<size_t>(spec.outputs);
      else if (spec.kind == LayerKind::dense)
        count = static_cast<size_t>(spec.outputs) * s.size() + static_cast<size_t>(spec.outputs);
      counts_.push_back(count);
      offset += count;
      s = layer_output_shape(spec, s);
    }
    output_ = s;
    params_.assign(offset, Real(0));
  }

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  size_t num_layers() const { return layers_.size(); }
  size_t num_params() const { return params_.size(); }

  std::span<Real> params() { return params_; }
  std::span<const Real> params() const { return params_; }
  size_t param_offset(size_t layer) const { return offsets_[layer]; }
  size_t param_count(size_t layer) const { return counts_[layer]; }
  std::span<Real> layer_params(size_t layer) { return std::span<Real>(params_).subspan(offsets_[layer], counts_[layer]); }
  std::span<const Real> layer_params(size_t layer) const {
    return std::span<const Real>(params_).subspan(offsets_[layer], counts_[layer]);
  }

  bool is_convolutional() const {
    return std::none_of(layers_.begin(), layers_.end(), [](const LayerSpec& s) { return s.kind == LayerKind::dense; });
  }

  /// Shape produced for an input of spatial size h x w.
  Shape output_shape_for(int h, int w) const {
    Shape s{input_.c, h, w};
    for (const LayerSpec& spec : layers_) s = layer_output_shape(spec, s);
    return s;
  }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
  void init_glorot(uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (size_t l = 0; l < layers_.size(); ++l) {
      const LayerSpec& spec = layers_[l];
      if (!spec.has_params()) continue;
      double fan_in = 0.0;
      double fan_out = 0.0;
      if (spec.kind == LayerKind::conv) {
        fan_in = static_cast<double>(in_shapes_[l].c) * spec.kernel * spec.kernel;
        fan_out = static_cast<double>(spec.outputs) * spec.kernel * spec.kernel;
      } else {
        fan_in = static_cast<double>(in_shapes_[l].size());
        fan_out = spec.outputs;
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      auto block = layer_params(l);
      const size_t bias = static_cast<size_t>(spec.outputs);
      for (size_t i = 0; i + bias < block.size(); ++i) block[i] = static_cast<Real>(dist(rng));
      std::fill(block.end() - static_cast<std::ptrdiff_t>(bias), block.end(), Real(0));
    }
  }

  /// Runs the network on one input of shape `shape` and records activations.
  std::span<const Real> forward(std::span<const Real> input, Shape shape, Trace& trace) const {
    if (shape.c != input_.c) throw DimensionError("network input channels " + std::to_string(shape.c) +
                                                  " != expected " + std::to_string(input_.c));
    if (input.size() != shape.size()) throw DimensionError("network input length does not match its shape");
    trace.shapes.resize(layers_.size() + 1);
    trace.values.resize(layers_.size() + 1);
    trace.shapes[0] = shape;
    trace.values[0].assign(input.begin(), input.end());
    for (size_t l = 0; l < layers_.size(); ++l) {
      const LayerSpec& spec = layers_[l];
      const Shape& in = trace.shapes[l];
      if (spec.kind == LayerKind::dense && in.size() != in_shapes_[l].size())
        throw DimensionError("dense layer expects " + std::to_string(in_shapes_[l].size()) + " inputs, got " +
                             std::to_string(in.size()));
      const Shape out = layer_output_shape(spec, in);
      trace.shapes[l + 1] = out;
      auto& y = trace.values[l + 1];
      y.assign(out.size(), Real(0));
      forward_layer(l, in, trace.values[l], out, y);
    }
    trace.filled = true;
    return trace.values.back();
  }

  /// Same architecture and parameters in another scalar type.
  template <class Other>
  Network<Other> cast() const {
    Network<Other> out(input_, layers_);
    auto dst = out.params();
    for (size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<Other>(params_[i]);
    return out;
  }

  /// Convenience forward without keeping the trace.
  std::vector<Real> evaluate(std::span<const Real> input, Shape shape) const {
    Trace trace;
    auto out = forward(input, shape, trace);
    return {out.begin(), out.end()};
  }

  /// Accumulates d(upstream . output)/d(params) into `grad` and, when
  /// requested, writes the gradient w.r.t. the network input.
  void backward(const Trace& trace, std::span<const Real> upstream, std::span<double> grad,
                std::vector<Real>* grad_input = nullptr) const {
    if (!trace.filled) throw StateError("backward called before forward");
    if (upstream.size() != trace.values.back().size()) throw DimensionError("upstream gradient length mismatch");
    if (grad.size() != params_.size()) throw DimensionError("parameter gradient length mismatch");
    std::vector<Real> g(upstream.begin(), upstream.end());
    std::vector<Real> g_in;
    for (size_t l = layers_.size(); l-- > 0;) {
      const bool need_input = l > 0 || grad_input != nullptr;
      g_in.assign(need_input ? trace.shapes[l].size() : 0, Real(0));
      backward_layer(l, trace, g, grad, need_input ? &g_in : nullptr);
      g.swap(g_in);
    }
    if (grad_input) *grad_input = std::move(g);
  }

 private:
  void forward_layer(size_t l, const Shape& in, const std::vector<Real>& x, const Shape& out, std::vector<Real>& y) const {
    const LayerSpec& spec = layers_[l];
    switch (spec.kind) {
      case LayerKind::conv: {
        const Real* w = params_.data() + offsets_[l];
        const Real* b = w + static_cast<size_t>(spec.outputs) * in.c * spec.kernel * spec.kernel;
        const int k = spec.kernel;
        const int s = spec.stride;
        const int p = spec.padding;
        for (int oc = 0; oc < out.c; ++oc) {
          Real* yo = y.data() + static_cast<size_t>(oc) * out.h * out.w;
          std::fill(yo, yo + static_cast<size_t>(out.h) * out.w, b[oc]);
          for (int ic = 0; ic < in.c; ++ic) {
            const Real* xi = x.data() + static_cast<size_t>(ic) * in.h * in.w;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const Real wv = w[((static_cast<size_t>(oc) * in.c + ic) * k + ky) * k + kx];
                const auto [ox0, ox1] = valid_range(kx, p, s, in.w, out.w);
                for (int oy = 0; oy < out.h; ++oy) {
                  const int iy = oy * s + ky - p;
                  if (iy < 0 || iy >= in.h) continue;
                  const Real* row = xi + static_cast<size_t>(iy) * in.w;
                  Real* yrow = yo + static_cast<size_t>(oy) * out.w;
                  for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * row[ox * s + kx - p];
                }
              }
          }
        }
        break;
      }
      case LayerKind::max_pool: {
        const int k = spec.kernel;
        for (int c = 0; c < out.c; ++c)
          for (int oy = 0; oy < out.h; ++oy)
            for (int ox = 0; ox < out.w; ++ox) {
              Real m = x[(static_cast<size_t>(c) * in.h + oy * k) * in.w + ox * k];
              for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx)
                  m = std::max(m, x[(static_cast<size_t>(c) * in.h + oy * k + dy) * in.w + ox * k + dx]);
              y[(static_cast<size_t>(c) * out.h + oy) * out.w + ox] = m;
            }
        break;
      }
      case LayerKind::dense: {
        const size_t n_in = in.size();
        const Real* w = params_.data() + offsets_[l];
        const Real* b = w + static_cast<size_t>(spec.outputs) * n_in;
        for (int o = 0; o < spec.outputs; ++o) {
          const Real* wr = w + static_cast<size_t>(o) * n_in;
          Real acc = b[o];
          for (size_t i = 0; i < n_in; ++i) acc += wr[i] * x[i];
          y[static_cast<size_t>(o)] = acc;
        }
        break;
      }
      case LayerKind::relu:
        for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
        break;
      case LayerKind::logistic:
        for (size_t i = 0; i < y.size(); ++i) y[i] = Real(1) / (Real(1) + std::exp(-x[i]));
        break;
    }
  }

  void backward_layer(size_t l, const Trace& trace, const std::vector<Real>& g, std::span<double> grad,
                      std::vector<Real>* g_in) const {
    const LayerSpec& spec = layers_[l];
    const Shape& in = trace.shapes[l];
    const Shape& out = trace.shapes[l + 1];
    const std::vector<Real>& x = trace.values[l];
    const std::vector<Real>& y = trace.values[l + 1];
    switch (spec.kind) {
      case LayerKind::conv: {
        const int k = spec.kernel;
        const int s = spec.stride;
        const int p = spec.padding;
        const size_t n_w = static_cast<size_t>(spec.outputs) * in.c * k * k;
        const Real* w = params_.data() + offsets_[l];
        double* gw = grad.data() + offsets_[l];
        double* gb = gw + n_w;
        for (int oc = 0; oc < out.c; ++oc) {
          const Real* go = g.data() + static_cast<size_t>(oc) * out.h * out.w;
          double bias_sum = 0.0;
          for (size_t i = 0; i < static_cast<size_t>(out.h) * out.w; ++i) bias_sum += go[i];
          gb[oc] += bias_sum;
          for (int ic = 0; ic < in.c; ++ic) {
            const Real* xi = x.data() + static_cast<size_t>(ic) * in.h * in.w;
            Real* gi = g_in ? g_in->data() + static_cast<size_t>(ic) * in.h * in.w : nullptr;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const size_t widx = ((static_cast<size_t>(oc) * in.c + ic) * k + ky) * k + kx;
                const Real wv = w[widx];
                const auto [ox0, ox1] = valid_range(kx, p, s, in.w, out.w);
                double acc = 0.0;
                for (int oy = 0; oy < out.h; ++oy) {
                  const int iy = oy * s + ky - p;
                  if (iy < 0 || iy >= in.h) continue;
                  const Real* row = xi + static_cast<size_t>(iy) * in.w;
                  const Real* grow = go + static_cast<size_t>(oy) * out.w;
                  Real racc = 0;
                  for (int ox = ox0; ox < ox1; ++ox) racc += grow[ox] * row[ox * s + kx - p];
                  acc += static_cast<double>(racc);
                  if (gi) {
                    Real* girow = gi + static_cast<size_t>(iy) * in.w;
                    for (int ox = ox0; ox < ox1; ++ox) girow[ox * s + kx - p] += wv * grow[ox];
                  }
                }
                gw[widx] += acc;
              }
          }
        }
        break;
      }
      case LayerKind::max_pool: {
        if (!g_in) break;
        const int k = spec.kernel;
        for (int c = 0; c < out.c; ++c)
          for (int oy = 0; oy < out.h; ++oy)
            for (int ox = 0; ox < out.w; ++ox) {
              const Real m = y[(static_cast<size_t>(c) * out.h + oy) * out.w + ox];
              bool routed = false;
              for (int dy = 0; dy < k && !routed; ++dy)
                for (int dx = 0; dx < k && !routed; ++dx) {
                  const size_t i = (static_cast<size_t>(c) * in.h + oy * k + dy) * in.w + ox * k + dx;
                  if (x[i] == m) {
                    (*g_in)[i] += g[(static_cast<size_t>(c) * out.h + oy) * out.w + ox];
                    routed = true;
                  }
                }
            }
        break;
      }
      case LayerKind::dense: {
        const size_t n_in = in.size();
        const Real* w = params_.data() + offsets_[l];
        double* gw = grad.data() + offsets_[l];
        double* gb = gw + static_cast<size_t>(spec.outputs) * n_in;
        for (int o = 0; o < spec.outputs; ++o) {
          const Real go = g[static_cast<size_t>(o)];
          gb[o] += go;
          if (go == Real(0)) continue;
          double* gwr = gw + static_cast<size_t>(o) * n_in;
          for (size_t i = 0; i < n_in; ++i) gwr[i] += static_cast<double>(go * x[i]);
          if (g_in) {
            const Real* wr = w + static_cast<size_t>(o) * n_in;
            for (size_t i = 0; i < n_in; ++i) (*g_in)[i] += wr[i] * go;
          }
        }
        break;
      }
      case LayerKind::relu:
        if (g_in)
          for (size_t i = 0; i < g.size(); ++i) (*g_in)[i] = x[i] > Real(0) ? g[i] : Real(0);
        break;
      case LayerKind::logistic:
        if (g_in)
          for (size_t i = 0; i < g.size(); ++i) (*g_in)[i] = g[i] * y[i] * (Real(1) - y[i]);
        break;
    }
  }

  // Output columns [ox0, ox1) whose input column ox*s + kx - p lies inside [0, in_w).
  static std::pair<int, int> valid_range(int kx, int p, int s, int in_w, int out_w) {
    int lo = 0;
    while (lo < out_w && lo * s + kx - p < 0) ++lo;
    int hi = out_w;
    while (hi > lo && (hi - 1) * s + kx - p >= in_w) --hi;
    return {lo, hi};
  }

  Shape input_;
  Shape output_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> in_shapes_;
  std::vector<size_t> offsets_;
  std::vector<size_t> counts_;
  std::vector<Real> params_;
};

}  // namespace dcnf
