#pragma once

// Depth rendering from superpixel log-depths and the standard error measures
// (rel, rms, log10, threshold accuracy), pixel-weighted across images.

#include "dcnf/crf.hpp"
#include "dcnf/errors.hpp"
#include "dcnf/slic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace dcnf {

/// Per-pixel depth in meters with a validity mask.
struct DepthField {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<uint8_t> valid;
  std::vector<int> source_labels;  // superpixel per pixel when rendered, else empty

  DepthField() = default;
  DepthField(int w, int h, double fill = 0.0)
      : width(w), height(h), depth(static_cast<size_t>(w) * h, fill), valid(static_cast<size_t>(w) * h, fill > 0.0) {}

  size_t size() const { return depth.size(); }
  double& at(int x, int y) { return depth[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
  size_t valid_count() const { return static_cast<size_t>(std::count(valid.begin(), valid.end(), uint8_t{1})); }
};

/// Every pixel of superpixel t gets exp(y_t) meters.
inline DepthField render_depth(const Segmentation& seg, const Vector& y) {
  if (y.size() != seg.n) throw DimensionError("render_depth: y length differs from superpixel count");
  for (Eigen::Index t = 0; t < y.size(); ++t)
    if (!std::isfinite(y[t])) throw DataError("render_depth: non-finite log-depth at superpixel " + std::to_string(t));
  DepthField field(seg.width, seg.height);
  field.source_labels = seg.label_map;
  for (size_t i = 0; i < field.size(); ++i) {
    field.depth[i] = std::exp(y[seg.label_map[i]]);
    field.valid[i] = 1;
  }
  return field;
}

struct MetricsReport {
  double rel = 0.0;
  double rms = 0.0;
  double log10 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  size_t pixel_count = 0;
};

inline void to_json(nlohmann::json& j, const MetricsReport& m) {
  j = {{"rel", m.rel},       {"log10", m.log10},   {"rms", m.rms},
       {"delta1", m.delta1}, {"delta2", m.delta2}, {"delta3", m.delta3},
       {"pixel_count", m.pixel_count}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& m) {
  m.rel = j.at("rel");
  m.log10 = j.at("log10");
  m.rms = j.at("rms");
  m.delta1 = j.at("delta1");
  m.delta2 = j.at("delta2");
  m.delta3 = j.at("delta3");
  m.pixel_count = j.at("pixel_count");
}

/// Running sums; merging accumulators equals pooling the pixel populations.
class MetricsAccumulator {
 public:
  /// Adds pixels valid in both fields (and passing `keep(gt)` if given).
  template <class Predicate>
  void add(const DepthField& pred, const DepthField& gt, Predicate keep) {
    if (pred.width != gt.width || pred.height != gt.height)
      throw DimensionError("metrics: prediction and ground truth sizes differ");
    for (size_t i = 0; i < gt.size(); ++i) {
      if (!pred.valid[i] || !gt.valid[i]) continue;
      const double d = pred.depth[i];
      const double g = gt.depth[i];
      if (!(d > 0.0) || !(g > 0.0) || !std::isfinite(d) || !std::isfinite(g))
        throw DataError("metrics: non-positive or non-finite depth at a valid pixel");
      if (!keep(g)) continue;
      add_pixel(d, g);
    }
  }
  void add(const DepthField& pred, const DepthField& gt) {
    add(pred, gt, [](double) { return true; });
  }

  void add_pixel(double d, double g) {
    rel_ += std::abs(g - d) / g;
    sq_ += (g - d) * (g - d);
    log10_ += std::abs(std::log10(g) - std::log10(d));
    const double ratio = std::max(g / d, d / g);
    if (ratio < 1.25) ++hits_[0];
    if (ratio < 1.25 * 1.25) ++hits_[1];
    if (ratio < 1.25 * 1.25 * 1.25) ++hits_[2];
    ++count_;
  }

  void merge(const MetricsAccumulator& other) {
    rel_ += other.rel_;
    sq_ += other.sq_;
    log10_ += other.log10_;
    for (int i = 0; i < 3; ++i) hits_[i] += other.hits_[i];
    count_ += other.count_;
  }

  size_t count() const { return count_; }

  MetricsReport report() const {
    if (count_ == 0) throw DataError("metrics: no pixel is valid in both prediction and ground truth");
    const double t = static_cast<double>(count_);
    MetricsReport m;
    m.rel = rel_ / t;
    m.rms = std::sqrt(sq_ / t);
    m.log10 = log10_ / t;
    m.delta1 = static_cast<double>(hits_[0]) / t;
    m.delta2 = static_cast<double>(hits_[1]) / t;
    m.delta3 = static_cast<double>(hits_[2]) / t;
    m.pixel_count = count_;
    return m;
  }

 private:
  double rel_ = 0.0;
  double sq_ = 0.0;
  double log10_ = 0.0;
  size_t hits_[3] = {0, 0, 0};
  size_t count_ = 0;
};

inline MetricsReport compute_metrics(const DepthField& pred, const DepthField& gt) {
  MetricsAccumulator acc;
  acc.add(pred, gt);
  return acc.report();
}

/// C1: pixels with ground truth below `cutoff` meters; C2: all valid pixels.
inline std::pair<MetricsReport, MetricsReport> masked_metrics_c1_c2(const DepthField& pred, const DepthField& gt,
                                                                    double cutoff) {
  if (!(cutoff > 0.0)) throw ParameterError("cutoff must be positive");
  MetricsAccumulator c1;
  c1.add(pred, gt, [cutoff](double g) { return g < cutoff; });
  if (c1.count() == 0) throw DataError("C1 region is empty: no ground truth below the cutoff");
  return {c1.report(), compute_metrics(pred, gt)};
}

/// |pred - gt| per pixel, NaN where either is invalid.
inline std::vector<double> absolute_error_map(const DepthField& pred, const DepthField& gt) {
  if (pred.width != gt.width || pred.height != gt.height) throw DimensionError("error map: size mismatch");
  std::vector<double> err(gt.size(), std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < gt.size(); ++i)
    if (pred.valid[i] && gt.valid[i]) err[i] = std::abs(pred.depth[i] - gt.depth[i]);
  return err;
}

struct ErrorHistogram {
  double max_error = 0.0;
  std::vector<double> edges;  // bins + 1 uniform edges over [0, max_error]
  std::vector<size_t> counts;
};

inline ErrorHistogram error_histogram(const std::vector<double>& errors, int bins = 20) {
  ErrorHistogram h;
  for (double e : errors)
    if (std::isfinite(e)) h.max_error = std::max(h.max_error, e);
  h.counts.assign(static_cast<size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(h.max_error * i / bins);
  for (double e : errors) {
    if (!std::isfinite(e)) continue;
    int b = h.max_error > 0.0 ? static_cast<int>(e / h.max_error * bins) : 0;
    ++h.counts[static_cast<size_t>(std::clamp(b, 0, bins - 1))];
  }
  return h;
}

inline void to_json(nlohmann::json& j, const ErrorHistogram& h) {
  j = {{"max_error", h.max_error}, {"edges", h.edges}, {"counts", h.counts}};
}

/// Aligned table in the usual column order; 4 decimals.
inline std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "set" << std::right;
  for (const char* h : {"rel", "log10", "rms", "d<1.25", "d<1.25^2", "d<1.25^3"}) os << std::setw(10) << h;
  os << '\n' << std::fixed << std::setprecision(4);
  for (const auto& [name, m] : rows) {
    os << std::left << std::setw(12) << name << std::right;
    for (double v : {m.rel, m.log10, m.rms, m.delta1, m.delta2, m.delta3}) os << std::setw(10) << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace dcnf
