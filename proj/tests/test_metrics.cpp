#include "dcnf/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace dcnf;

namespace {

Segmentation checker(int w, int h) {
  std::vector<int> labels(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) labels[static_cast<size_t>(y) * w + x] = (x + y) % 2;
  return Segmentation::from_label_map(w, h, labels);
}

DepthField random_field(std::mt19937_64& rng, int w, int h, double lo, double hi) {
  std::uniform_real_distribution<double> uni(lo, hi);
  DepthField f(w, h, 1.0);
  for (double& d : f.depth) d = uni(rng);
  return f;
}

void expect_reports_equal(const MetricsReport& a, const MetricsReport& b, double tol) {
  EXPECT_NEAR(a.rel, b.rel, tol);
  EXPECT_NEAR(a.rms, b.rms, tol);
  EXPECT_NEAR(a.log10, b.log10, tol);
  EXPECT_NEAR(a.delta1, b.delta1, tol);
  EXPECT_NEAR(a.delta2, b.delta2, tol);
  EXPECT_NEAR(a.delta3, b.delta3, tol);
  EXPECT_EQ(a.pixel_count, b.pixel_count);
}

}  // namespace

TEST(RenderDepth, SingleSuperpixelZeroLogDepth) {
  const Segmentation seg = Segmentation::from_label_map(16, 16, std::vector<int>(256, 0));
  const DepthField f = render_depth(seg, Vector::Zero(1));
  for (double d : f.depth) EXPECT_EQ(d, 1.0);
  EXPECT_EQ(f.valid_count(), 256u);
}

TEST(RenderDepth, UniformTwoMeters) {
  const Segmentation seg = checker(16, 16);
  const DepthField f = render_depth(seg, Vector::Constant(2, std::log(2.0)));
  for (double d : f.depth) EXPECT_NEAR(d, 2.0, 1e-15);
}

TEST(RenderDepth, CheckerAlternates) {
  const Segmentation seg = checker(16, 16);
  const DepthField f = render_depth(seg, (Vector(2) << 0.0, std::log(3.0)).finished());
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) EXPECT_NEAR(f.at(x, y), (x + y) % 2 ? 3.0 : 1.0, 1e-15);
  EXPECT_EQ(f.source_labels, seg.label_map);
}

TEST(RenderDepth, RejectsNonFiniteAndWrongLength) {
  const Segmentation seg = checker(16, 16);
  EXPECT_THROW(render_depth(seg, (Vector(2) << 0.0, NAN).finished()), DataError);
  EXPECT_THROW(render_depth(seg, Vector::Zero(3)), DimensionError);
}

TEST(ComputeMetrics, PerfectPrediction) {
  std::mt19937_64 rng(61);
  const DepthField gt = random_field(rng, 20, 10, 0.5, 9.0);
  const MetricsReport m = compute_metrics(gt, gt);
  EXPECT_EQ(m.rel, 0.0);
  EXPECT_EQ(m.rms, 0.0);
  EXPECT_EQ(m.log10, 0.0);
  EXPECT_EQ(m.delta1, 1.0);
  EXPECT_EQ(m.delta2, 1.0);
  EXPECT_EQ(m.delta3, 1.0);
  EXPECT_EQ(m.pixel_count, 200u);
}

TEST(ComputeMetrics, TwoVersusFourMeters) {
  const MetricsReport m = compute_metrics(DepthField(9, 4, 4.0), DepthField(9, 4, 2.0));
  EXPECT_NEAR(m.rel, 1.0, 1e-12);
  EXPECT_NEAR(m.rms, 2.0, 1e-12);
  EXPECT_NEAR(m.log10, 0.30102999566398120, 1e-12);
  EXPECT_EQ(m.delta1, 0.0);
  EXPECT_EQ(m.delta2, 0.0);
  EXPECT_EQ(m.delta3, 0.0);
}

TEST(ComputeMetrics, MixedRatiosHalfAndHalf) {
  // Ratio 1.2 passes every threshold. Ratio 1.6 exceeds 1.25^2 = 1.5625, so it
  // only passes the cubic one.
  DepthField gt(10, 10, 1.0), pred(10, 10, 1.0);
  for (size_t i = 0; i < gt.size(); ++i) pred.depth[i] = i % 2 ? 1.2 : 1.6;
  const MetricsReport m = compute_metrics(pred, gt);
  EXPECT_EQ(m.delta1, 0.5);
  EXPECT_EQ(m.delta2, 0.5);
  EXPECT_EQ(m.delta3, 1.0);
}

TEST(ComputeMetrics, RatiosInsideSecondThreshold) {
  DepthField gt(10, 10, 1.0), pred(10, 10, 1.0);
  for (size_t i = 0; i < gt.size(); ++i) pred.depth[i] = i % 2 ? 1.2 : 1.5;
  const MetricsReport m = compute_metrics(pred, gt);
  EXPECT_EQ(m.delta1, 0.5);
  EXPECT_EQ(m.delta2, 1.0);
}

TEST(ComputeMetrics, InvalidPixelsAreExcluded) {
  DepthField gt(4, 4, 2.0), pred(4, 4, 2.0);
  gt.valid[3] = 0;
  gt.depth[3] = 0.0;
  pred.depth[5] = 100.0;
  pred.valid[5] = 0;
  const MetricsReport m = compute_metrics(pred, gt);
  EXPECT_EQ(m.pixel_count, 14u);
  EXPECT_EQ(m.rel, 0.0);
}

TEST(ComputeMetrics, Errors) {
  DepthField gt(4, 4, 2.0), pred(4, 4, 2.0);
  std::fill(gt.valid.begin(), gt.valid.end(), uint8_t{0});
  EXPECT_THROW(compute_metrics(pred, gt), DataError);
  DepthField neg(4, 4, 2.0);
  neg.depth[0] = -1.0;
  EXPECT_THROW(compute_metrics(neg, DepthField(4, 4, 2.0)), DataError);
  EXPECT_THROW(compute_metrics(DepthField(4, 5, 1.0), DepthField(4, 4, 1.0)), DimensionError);
}

TEST(ComputeMetrics, DeltaMonotoneAndBounded) {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 1000; ++trial) {
    const MetricsReport m = compute_metrics(random_field(rng, 8, 8, 0.1, 10.0), random_field(rng, 8, 8, 0.1, 10.0));
    EXPECT_GE(m.delta1, 0.0);
    EXPECT_LE(m.delta1, m.delta2);
    EXPECT_LE(m.delta2, m.delta3);
    EXPECT_LE(m.delta3, 1.0);
    EXPECT_GE(m.rel, 0.0);
    EXPECT_GE(m.rms, 0.0);
    EXPECT_GE(m.log10, 0.0);
  }
}

TEST(ComputeMetrics, ScaleBehaviour) {
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 50; ++trial) {
    const DepthField pred = random_field(rng, 6, 6, 0.5, 5.0), gt = random_field(rng, 6, 6, 0.5, 5.0);
    const double c = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    DepthField ps = pred, gs = gt;
    for (double& d : ps.depth) d *= c;
    for (double& d : gs.depth) d *= c;
    const MetricsReport a = compute_metrics(pred, gt), b = compute_metrics(ps, gs);
    EXPECT_NEAR(b.rel, a.rel, 1e-12);
    EXPECT_NEAR(b.log10, a.log10, 1e-12);
    EXPECT_NEAR(b.rms, c * a.rms, 1e-11 * c);
    // Thresholds compare ratios, which can move by an ulp under scaling.
    EXPECT_NEAR(b.delta1, a.delta1, 1.0 / 36 + 1e-12);
    EXPECT_NEAR(b.delta3, a.delta3, 1.0 / 36 + 1e-12);
  }
}

TEST(ComputeMetrics, ScaleByPowerOfTwoIsExact) {
  std::mt19937_64 rng(64);
  const DepthField pred = random_field(rng, 10, 10, 0.5, 5.0), gt = random_field(rng, 10, 10, 0.5, 5.0);
  DepthField ps = pred, gs = gt;
  for (double& d : ps.depth) d *= 4.0;
  for (double& d : gs.depth) d *= 4.0;
  const MetricsReport a = compute_metrics(pred, gt), b = compute_metrics(ps, gs);
  EXPECT_EQ(a.delta1, b.delta1);
  EXPECT_EQ(a.delta2, b.delta2);
  EXPECT_EQ(a.delta3, b.delta3);
}

TEST(ComputeMetrics, DeltaSymmetry) {
  std::mt19937_64 rng(65);
  for (int trial = 0; trial < 100; ++trial) {
    const DepthField a = random_field(rng, 7, 7, 0.2, 8.0), b = random_field(rng, 7, 7, 0.2, 8.0);
    const MetricsReport ab = compute_metrics(a, b), ba = compute_metrics(b, a);
    EXPECT_EQ(ab.delta1, ba.delta1);
    EXPECT_EQ(ab.delta2, ba.delta2);
    EXPECT_EQ(ab.delta3, ba.delta3);
  }
}

TEST(MetricsAccumulator, MergeEqualsPooledPixels) {
  std::mt19937_64 rng(66);
  std::vector<DepthField> preds, gts;
  for (int i = 0; i < 5; ++i) {
    preds.push_back(random_field(rng, 5 + i, 4, 0.5, 6.0));
    gts.push_back(random_field(rng, 5 + i, 4, 0.5, 6.0));
  }
  MetricsAccumulator merged;
  DepthField cat_pred(1, 0), cat_gt(1, 0);
  for (int i = 0; i < 5; ++i) {
    MetricsAccumulator one;
    one.add(preds[static_cast<size_t>(i)], gts[static_cast<size_t>(i)]);
    merged.merge(one);
    cat_pred.depth.insert(cat_pred.depth.end(), preds[static_cast<size_t>(i)].depth.begin(), preds[static_cast<size_t>(i)].depth.end());
    cat_gt.depth.insert(cat_gt.depth.end(), gts[static_cast<size_t>(i)].depth.begin(), gts[static_cast<size_t>(i)].depth.end());
  }
  cat_pred.height = cat_gt.height = static_cast<int>(cat_pred.depth.size());
  cat_pred.valid.assign(cat_pred.depth.size(), 1);
  cat_gt.valid.assign(cat_gt.depth.size(), 1);
  expect_reports_equal(merged.report(), compute_metrics(cat_pred, cat_gt), 1e-12);
}

TEST(MaskedMetrics, AllBelowCutoffGivesEqualReports) {
  std::mt19937_64 rng(67);
  const DepthField pred = random_field(rng, 8, 8, 0.5, 5.0), gt = random_field(rng, 8, 8, 0.5, 5.0);
  const auto [c1, c2] = masked_metrics_c1_c2(pred, gt, 70.0);
  expect_reports_equal(c1, c2, 0.0);
  const auto [i1, i2] = masked_metrics_c1_c2(pred, gt, std::numeric_limits<double>::infinity());
  expect_reports_equal(i1, i2, 0.0);
}

TEST(MaskedMetrics, SplitAroundCutoff) {
  DepthField gt(10, 10, 1.0), pred(10, 10, 1.0);
  for (size_t i = 0; i < gt.size(); ++i) {
    gt.depth[i] = i < 50 ? 10.0 : 100.0;
    pred.depth[i] = i < 50 ? 10.0 : 200.0;
  }
  const auto [c1, c2] = masked_metrics_c1_c2(pred, gt, 70.0);
  EXPECT_EQ(c1.rel, 0.0);
  EXPECT_EQ(c1.rms, 0.0);
  EXPECT_EQ(c1.pixel_count, 50u);
  EXPECT_NEAR(c2.rel, 0.5, 1e-15);
  EXPECT_EQ(c2.pixel_count, 100u);
}

TEST(MaskedMetrics, Errors) {
  const DepthField f(4, 4, 100.0);
  EXPECT_THROW(masked_metrics_c1_c2(f, f, 70.0), DataError);
  EXPECT_THROW(masked_metrics_c1_c2(f, f, 0.0), ParameterError);
}

TEST(ErrorMaps, HistogramBinsAndMap) {
  DepthField gt(4, 1, 1.0), pred(4, 1, 1.0);
  pred.depth = {1.0, 1.5, 2.0, 3.0};
  gt.valid[3] = 0;
  const auto err = absolute_error_map(pred, gt);
  EXPECT_EQ(err[0], 0.0);
  EXPECT_EQ(err[2], 1.0);
  EXPECT_TRUE(std::isnan(err[3]));
  const ErrorHistogram h = error_histogram(err, 20);
  ASSERT_EQ(h.edges.size(), 21u);
  EXPECT_EQ(h.edges.front(), 0.0);
  EXPECT_EQ(h.edges.back(), 1.0);
  size_t total = 0;
  for (auto c : h.counts) total += c;
  EXPECT_EQ(total, 3u);
}

TEST(MetricsTable, ColumnOrderAndPrecision) {
  MetricsReport m;
  m.rel = 0.123456;
  m.log10 = 0.05;
  m.rms = 0.75;
  m.delta1 = 0.5;
  m.delta2 = 0.75;
  m.delta3 = 1.0;
  const std::string table = format_metrics_table({{"set", m}});
  EXPECT_LT(table.find("rel"), table.find("log10"));
  EXPECT_LT(table.find("log10"), table.find("rms"));
  EXPECT_LT(table.find("rms"), table.find("d<1.25"));
  EXPECT_NE(table.find("0.1235"), std::string::npos);
  nlohmann::json j = m;
  EXPECT_EQ(j.at("rel").get<double>(), 0.123456);
}
