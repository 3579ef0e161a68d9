#pragma once

// Oracle suite behind the `selfcheck` command. Every row compares a library
// routine against an independent evaluation on seeded random instances and
// records the measured error next to its tolerance.

#include "dcnf/crf.hpp"
#include "dcnf/io.hpp"
#include "dcnf/metrics.hpp"
#include "dcnf/nn.hpp"
#include "dcnf/sp_pool.hpp"
#include "dcnf/synth.hpp"
#include "dcnf/trainer.hpp"
#include "dcnf/unary.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace dcnf {

struct SelfcheckRow {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string note;
};

struct SelfcheckReport {
  std::vector<SelfcheckRow> rows;

  bool passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const SelfcheckRow& r) { return r.passed; });
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"name", r.name}, {"error", r.error}, {"tolerance", r.tolerance}, {"passed", r.passed}, {"note", r.note}});
    return {{"passed", passed()}, {"rows", j}};
  }

  std::string table() const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-31s %12s %12s  %s\n", "check", "error", "tolerance", "result");
    out << line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%-31s %12.3e %12.3e  %s%s%s\n", r.name.c_str(), r.error, r.tolerance,
                    r.passed ? "pass" : "FAIL", r.note.empty() ? "" : "  ", r.note.c_str());
      out << line;
    }
    return out.str();
  }
};

/// Routines under test. Tests replace entries to confirm that a broken
/// implementation is caught.
struct SelfcheckHooks {
  std::function<Vector(const Vector&, const Vector&, const RegularizedLaplacian&)> grad_z =
      [](const Vector& y, const Vector& z, const RegularizedLaplacian& a) { return grad_nll_wrt_z(y, z, a); };
  std::function<Vector(const Vector&, const Vector&, const RegularizedLaplacian&, const CrfGraph&)> grad_beta =
      [](const Vector& y, const Vector& z, const RegularizedLaplacian& a, const CrfGraph& g) {
        return grad_nll_wrt_beta(y, z, a, g);
      };
  std::function<double(const RegularizedLaplacian&, const Vector&)> log_partition_fn =
      [](const RegularizedLaplacian& a, const Vector& z) { return log_partition(a, z); };
  std::function<Vector(const RegularizedLaplacian&, const Vector&)> map_fn =
      [](const RegularizedLaplacian& a, const Vector& z) { return map_infer(a, z); };
  std::function<std::vector<double>(const BasicFeatureGrid<double>&, const PoolingWeights&)> pool_fn =
      [](const BasicFeatureGrid<double>& g, const PoolingWeights& w) { return pool_forward(g, w); };
  std::function<BasicFeatureGrid<double>(const std::vector<double>&, const PoolingWeights&, int)> pool_back_fn =
      [](const std::vector<double>& u, const PoolingWeights& w, int d) { return pool_backward(u, w, d); };
};

/// Random connected graph: a path through all nodes plus extra random edges,
/// similarities uniform in (0, 1].
inline CrfGraph random_graph(std::mt19937_64& rng, int n, int channels, int extra_edges) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::uniform_int_distribution<int> node(0, n - 1);
  std::set<std::pair<int, int>> seen;
  CrfGraph g;
  g.n = n;
  auto add = [&](int p, int q) {
    if (p == q) return;
    if (p > q) std::swap(p, q);
    if (seen.insert({p, q}).second) g.edges.push_back({p, q});
  };
  for (int p = 0; p + 1 < n; ++p) add(p, p + 1);
  for (int e = 0; e < extra_edges; ++e) add(node(rng), node(rng));
  g.similarities.assign(static_cast<size_t>(channels), std::vector<double>(g.edges.size()));
  for (auto& s : g.similarities)
    for (double& v : s) v = 1.0 - uni(rng);
  return g;
}

inline Vector random_vector(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = uni(rng);
  return v;
}

inline PairwiseWeights random_beta(std::mt19937_64& rng, int channels) {
  return PairwiseWeights(random_vector(rng, channels, 0.0, 2.0));
}

/// Voronoi label map over `n` distinct random seed pixels.
inline Segmentation random_segmentation(std::mt19937_64& rng, int width, int height, int n) {
  std::vector<int> cells(static_cast<size_t>(width) * height);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<int> labels(cells.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int best = 0;
      long long best_d = std::numeric_limits<long long>::max();
      for (int t = 0; t < n; ++t) {
        const int sx = cells[static_cast<size_t>(t)] % width;
        const int sy = cells[static_cast<size_t>(t)] / width;
        const long long d = static_cast<long long>(sx - x) * (sx - x) + static_cast<long long>(sy - y) * (sy - y);
        if (d < best_d) {
          best_d = d;
          best = t;
        }
      }
      labels[static_cast<size_t>(y) * width + x] = best;
    }
  return Segmentation::from_label_map(width, height, std::move(labels));
}

/// Norm-wise relative difference ||a - b|| / max(||b||, floor).
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-12) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  return relative_error(Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size())),
                        Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size())), floor);
}

namespace detail {

/// log of the integral of exp(-E(y)) over R^2 by nested adaptive quadrature.
inline double quadrature_log_partition_2d(const Eigen::Matrix2d& a, const Eigen::Vector2d& z) {
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::Vector2d center = a.ldlt().solve(z);
  const double e_min = -z.dot(center) + z.dot(z);
  auto energy_shifted = [&](double y1, double y2) {
    const Eigen::Vector2d y(y1, y2);
    return y.dot(a * y) - 2.0 * z.dot(y) + z.dot(z) - e_min;
  };
  auto inner = [&](double y1) {
    return gauss_kronrod<double, 61>::integrate([&](double y2) { return std::exp(-energy_shifted(y1, y2)); }, -inf, inf,
                                                 15, 1e-13);
  };
  const double integral = gauss_kronrod<double, 61>::integrate(inner, -inf, inf, 15, 1e-12);
  return std::log(integral) - e_min;
}

inline SelfcheckRow make_row(std::string name, double error, double tolerance, std::string note = "") {
  return {std::move(name), error, tolerance, std::isfinite(error) && error <= tolerance, std::move(note)};
}

template <class F>
SelfcheckRow guarded(const std::string& name, double tolerance, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {name, std::numeric_limits<double>::infinity(), tolerance, false, std::string("exception: ") + e.what()};
  }
}

}  // namespace detail

inline SelfcheckRow check_log_partition(uint64_t seed, const SelfcheckHooks& hooks = {}) {
  return detail::guarded("log_partition_quadrature", 1e-8, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      CrfGraph g = random_graph(rng, 2, 2, 0);
      const PairwiseWeights beta = random_beta(rng, 2);
      const Vector z = random_vector(rng, 2, -1.5, 1.5);
      const RegularizedLaplacian a = assemble_laplacian(g, beta);
      const Eigen::Matrix2d dense = Eigen::MatrixXd(a.matrix());
      const double expected = detail::quadrature_log_partition_2d(dense, Eigen::Vector2d(z[0], z[1]));
      worst = std::max(worst, std::abs(hooks.log_partition_fn(a, z) - expected) / std::max(1.0, std::abs(expected)));
    }
    return detail::make_row("log_partition_quadrature", worst, 1e-8);
  });
}

inline SelfcheckRow check_log_determinant(uint64_t seed) {
  return detail::guarded("log_determinant_dense", 1e-9, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const CrfGraph g = random_graph(rng, 30, 3, 40);
      const RegularizedLaplacian a = assemble_laplacian(g, random_beta(rng, 3));
      const Eigen::MatrixXd dense(a.matrix());
      const Eigen::LLT<Eigen::MatrixXd> llt(dense);
      const double expected = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      worst = std::max(worst, std::abs(a.log_determinant() - expected) / std::max(1.0, std::abs(expected)));
    }
    return detail::make_row("log_determinant_dense", worst, 1e-9);
  });
}

/// MAP output must zero the energy gradient 2(Ay - z).
inline SelfcheckRow check_map_stationarity(uint64_t seed, const SelfcheckHooks& hooks = {}) {
  return detail::guarded("map_stationarity", 1e-9, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const CrfGraph g = random_graph(rng, 25, 3, 30);
      const RegularizedLaplacian a = assemble_laplacian(g, random_beta(rng, 3));
      const Vector z = random_vector(rng, g.n, -2.0, 2.0);
      const Vector y = hooks.map_fn(a, z);
      const Vector grad = 2.0 * (a.matrix() * y - z);
      worst = std::max(worst, grad.norm() / std::max(1.0, z.norm()));
    }
    return detail::make_row("map_stationarity", worst, 1e-9);
  });
}

inline SelfcheckRow check_cg_against_cholesky(uint64_t seed) {
  return detail::guarded("cg_vs_cholesky", 1e-8, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const CrfGraph g = random_graph(rng, 200, 3, 400);
      const PairwiseWeights beta = random_beta(rng, 3);
      SolverOptions cg;
      cg.backend = SolverBackend::conjugate_gradient;
      cg.cg_tolerance = 1e-12;
      SolverOptions chol;
      chol.backend = SolverBackend::cholesky;
      const Vector z = random_vector(rng, g.n, -2.0, 2.0);
      worst = std::max(worst, relative_error(map_infer(assemble_laplacian(g, beta, cg), z),
                                             map_infer(assemble_laplacian(g, beta, chol), z)));
    }
    return detail::make_row("cg_vs_cholesky", worst, 1e-8);
  });
}

inline SelfcheckRow check_grad_z(uint64_t seed, const SelfcheckHooks& hooks = {}) {
  return detail::guarded("grad_nll_z_finite_diff", 1e-5, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
      const CrfGraph g = random_graph(rng, 10, 3, 8);
      const RegularizedLaplacian a = assemble_laplacian(g, random_beta(rng, 3));
      const Vector y = random_vector(rng, g.n, -1.0, 1.0);
      const Vector z = random_vector(rng, g.n, -1.0, 1.0);
      Vector fd(g.n);
      for (int p = 0; p < g.n; ++p) {
        Vector zp = z, zm = z;
        zp[p] += h;
        zm[p] -= h;
        fd[p] = (negative_log_likelihood(y, zp, a) - negative_log_likelihood(y, zm, a)) / (2.0 * h);
      }
      worst = std::max(worst, relative_error(hooks.grad_z(y, z, a), fd));
    }
    return detail::make_row("grad_nll_z_finite_diff", worst, 1e-5);
  });
}

inline SelfcheckRow check_grad_beta(uint64_t seed, const SelfcheckHooks& hooks = {}) {
  return detail::guarded("grad_nll_beta_finite_diff", 1e-4, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
      const CrfGraph g = random_graph(rng, 8, 3, 6);
      const PairwiseWeights beta(random_vector(rng, 3, 0.1, 2.0));
      const RegularizedLaplacian a = assemble_laplacian(g, beta);
      const Vector y = random_vector(rng, g.n, -1.0, 1.0);
      const Vector z = random_vector(rng, g.n, -1.0, 1.0);
      Vector fd(3);
      for (int k = 0; k < 3; ++k) {
        PairwiseWeights bp = beta, bm = beta;
        bp.beta[k] += h;
        bm.beta[k] -= h;
        fd[k] = (negative_log_likelihood(y, z, assemble_laplacian(g, bp)) -
                 negative_log_likelihood(y, z, assemble_laplacian(g, bm))) /
                (2.0 * h);
      }
      worst = std::max(worst, relative_error(hooks.grad_beta(y, z, a, g), fd));
    }
    return detail::make_row("grad_nll_beta_finite_diff", worst, 1e-4);
  });
}

/// Explicit pipeline: nearest-neighbour upsample of the grid to image size,
/// mask by superpixel, average.
inline std::vector<double> materialized_pool(const BasicFeatureGrid<double>& grid, const Segmentation& seg) {
  const int H = seg.height;
  const int W = seg.width;
  std::vector<double> up(static_cast<size_t>(H) * W * grid.d);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const int i = static_cast<int>(std::floor(static_cast<double>(r) * grid.h / H));
      const int j = static_cast<int>(std::floor(static_cast<double>(c) * grid.w / W));
      for (int k = 0; k < grid.d; ++k) up[(static_cast<size_t>(k) * H + r) * W + c] = grid.at(i, j, k);
    }
  std::vector<double> out(static_cast<size_t>(seg.n) * grid.d, 0.0);
  std::vector<int> count(static_cast<size_t>(seg.n), 0);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const int t = seg.label(c, r);
      ++count[static_cast<size_t>(t)];
      for (int k = 0; k < grid.d; ++k)
        out[static_cast<size_t>(t) * grid.d + k] += up[(static_cast<size_t>(k) * H + r) * W + c];
    }
  for (int t = 0; t < seg.n; ++t)
    for (int k = 0; k < grid.d; ++k) out[static_cast<size_t>(t) * grid.d + k] /= count[static_cast<size_t>(t)];
  return out;
}

inline BasicFeatureGrid<double> random_grid(std::mt19937_64& rng, int h, int w, int d) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  BasicFeatureGrid<double> g(h, w, d);
  for (double& v : g.data) v = uni(rng);
  return g;
}

inline SelfcheckRow check_pool_forward(uint64_t seed, const SelfcheckHooks& hooks = {}) {
  return detail::guarded("pool_forward_oracle", 1e-6, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(16, 48);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const int W = dim(rng), H = dim(rng);
      const Segmentation seg = random_segmentation(rng, W, H, std::uniform_int_distribution<int>(5, 60)(rng));
      const int h = std::uniform_int_distribution<int>(1, H)(rng);
      const int w = std::uniform_int_distribution<int>(1, W)(rng);
      const auto grid = random_grid(rng, h, w, 4);
      const auto got = hooks.pool_fn(grid, build_pooling_weights(seg, h, w));
      const auto want = materialized_pool(grid, seg);
      for (size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    return detail::make_row("pool_forward_oracle", worst, 1e-6);
  });
}

inline SelfcheckRow check_pool_adjoint(uint64_t seed, const SelfcheckHooks& hooks = {}) {
  return detail::guarded("pool_adjointness", 1e-10, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Segmentation seg = random_segmentation(rng, 40, 30, 25);
      const int h = std::uniform_int_distribution<int>(2, 30)(rng);
      const int w = std::uniform_int_distribution<int>(2, 40)(rng);
      const int d = 3;
      const PoolingWeights weights = build_pooling_weights(seg, h, w);
      const auto c = random_grid(rng, h, w, d);
      std::vector<double> u(static_cast<size_t>(seg.n) * d);
      for (double& v : u) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
      const auto pooled = hooks.pool_fn(c, weights);
      const auto back = hooks.pool_back_fn(u, weights, d);
      double lhs = 0.0, rhs = 0.0;
      for (size_t i = 0; i < u.size(); ++i) lhs += pooled[i] * u[i];
      for (size_t i = 0; i < c.data.size(); ++i) rhs += c.data[i] * back.data[i];
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    }
    return detail::make_row("pool_adjointness", worst, 1e-10);
  });
}

inline SelfcheckRow check_pool_weight_sums(uint64_t seed) {
  return detail::guarded("pool_weight_sums", 1e-12, [&] {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Segmentation seg = random_segmentation(rng, 37, 29, 40);
      const PoolingWeights weights = build_pooling_weights(seg, std::uniform_int_distribution<int>(1, 29)(rng),
                                                           std::uniform_int_distribution<int>(1, 37)(rng));
      for (const auto& entries : weights.per_node) {
        double sum = 0.0;
        for (const auto& e : entries) sum += e.weight;
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    return detail::make_row("pool_weight_sums", worst, 1e-12);
  });
}

/// Gradient of upstream . f(x) by central differences in double precision.
inline std::vector<double> network_fd_gradient(const Network<double>& net, const std::vector<double>& input, Shape shape,
                                               const std::vector<double>& upstream, double h) {
  Network<double> probe = net;
  std::vector<double> out(net.num_params());
  auto objective = [&]() {
    const auto y = probe.evaluate(input, shape);
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
    return s;
  };
  auto params = probe.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double fp = objective();
    params[i] = orig - h;
    const double fm = objective();
    params[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

/// Random miniature instance exercising every layer kind.
inline Network<float> random_miniature_network(std::mt19937_64& rng) {
  Network<float> net({2, 6, 6}, {LayerSpec::conv(3, 3, 1, 1), LayerSpec::relu(), LayerSpec::max_pool(2),
                                 LayerSpec::conv(4, 2, 1, 0), LayerSpec::logistic(), LayerSpec::dense(5),
                                 LayerSpec::relu(), LayerSpec::dense(2)});
  net.init_glorot(rng());
  std::uniform_real_distribution<double> bias(-0.3, 0.3);
  for (size_t l = 0; l < net.num_layers(); ++l) {
    if (!net.layers()[l].has_params()) continue;
    auto block = net.layer_params(l);
    const size_t b = static_cast<size_t>(net.layers()[l].outputs);
    for (size_t i = block.size() - b; i < block.size(); ++i) block[i] = static_cast<float>(bias(rng));
  }
  return net;
}

/// 32-bit analytic gradients against a 64-bit finite-difference oracle.
inline SelfcheckRow check_network_gradients(uint64_t seed) {
  return detail::guarded("network_grad_finite_diff", 1e-4, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Network<float> net = random_miniature_network(rng);
      const Shape shape = net.input_shape();
      std::vector<double> input(shape.size());
      for (double& v : input) v = uni(rng);
      const std::vector<double> upstream = {uni(rng) - 0.5, uni(rng) - 0.5};
      typename Network<float>::Trace trace;
      const std::vector<float> input_f(input.begin(), input.end());
      net.forward(input_f, shape, trace);
      std::vector<double> analytic(net.num_params(), 0.0);
      const std::vector<float> up_f(upstream.begin(), upstream.end());
      net.backward(trace, up_f, analytic);
      const Network<double> net_d = net.cast<double>();
      std::vector<double> in_d(input_f.begin(), input_f.end());
      std::vector<double> up_d(up_f.begin(), up_f.end());
      worst = std::max(worst, relative_error(analytic, network_fd_gradient(net_d, in_d, shape, up_d, 1e-6)));
    }
    return detail::make_row("network_grad_finite_diff", worst, 1e-4);
  });
}

/// Direct nested-loop convolution (zero padding), CHW layout.
inline std::vector<double> naive_conv(const std::vector<double>& x, Shape in, std::span<const double> params,
                                      const LayerSpec& spec) {
  const int k = spec.kernel;
  const int oh = (in.h + 2 * spec.padding - k) / spec.stride + 1;
  const int ow = (in.w + 2 * spec.padding - k) / spec.stride + 1;
  std::vector<double> y(static_cast<size_t>(spec.outputs) * oh * ow);
  const size_t weights = static_cast<size_t>(spec.outputs) * in.c * k * k;
  for (int o = 0; o < spec.outputs; ++o)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double s = params[weights + static_cast<size_t>(o)];
        for (int ci = 0; ci < in.c; ++ci)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const int rr = r * spec.stride - spec.padding + u;
              const int cc = c * spec.stride - spec.padding + v;
              if (rr < 0 || rr >= in.h || cc < 0 || cc >= in.w) continue;
              s += params[((static_cast<size_t>(o) * in.c + ci) * k + u) * k + v] *
                   x[(static_cast<size_t>(ci) * in.h + rr) * in.w + cc];
            }
        y[(static_cast<size_t>(o) * oh + r) * ow + c] = s;
      }
  return y;
}

inline SelfcheckRow check_conv_oracle(uint64_t seed) {
  return detail::guarded("conv_naive_oracle", 1e-5, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const LayerSpec l1 = LayerSpec::conv(4, 3, 1, 1);
      const LayerSpec l2 = LayerSpec::conv(3, 3, 2, 1);
      Network<double> net({2, 11, 9}, {l1, l2});
      for (double& p : net.params()) p = uni(rng);
      std::vector<double> x(net.input_shape().size());
      for (double& v : x) v = uni(rng);
      const auto got = net.evaluate(x, net.input_shape());
      const auto h1 = naive_conv(x, net.input_shape(), net.layer_params(0), l1);
      const auto want = naive_conv(h1, {4, 11, 9}, net.layer_params(1), l2);
      if (got.size() != want.size()) return detail::make_row("conv_naive_oracle", INFINITY, 1e-5, "shape mismatch");
      for (size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    return detail::make_row("conv_naive_oracle", worst, 1e-5);
  });
}

/// gt 2 m, prediction 4 m: rel 1, rms 2, log10 = log10(2), all thresholds 0.
inline SelfcheckRow check_metrics_hand(uint64_t) {
  return detail::guarded("metrics_hand_values", 1e-12, [&] {
    DepthField gt(7, 5, 2.0), pred(7, 5, 4.0);
    const MetricsReport m = compute_metrics(pred, gt);
    const double err = std::max({std::abs(m.rel - 1.0), std::abs(m.rms - 2.0), std::abs(m.log10 - std::log10(2.0)),
                                 std::abs(m.delta1), std::abs(m.delta2), std::abs(m.delta3)});
    return detail::make_row("metrics_hand_values", err, 1e-12);
  });
}

inline SelfcheckRow check_pfm_roundtrip(uint64_t seed) {
  return detail::guarded("pfm_roundtrip", 0.0, [&] {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> uni(0.1f, 80.0f);
    const int w = 13, h = 7;
    std::vector<float> values(static_cast<size_t>(w) * h);
    for (float& v : values) v = uni(rng);
    const auto path = std::filesystem::temp_directory_path() / ("dcnf_selfcheck_" + std::to_string(seed) + ".pfm");
    write_pfm(path.string(), w, h, values);
    int rw = 0, rh = 0;
    const auto back = read_pfm(path.string(), rw, rh);
    std::filesystem::remove(path);
    double mismatches = (rw == w && rh == h) ? 0.0 : 1.0;
    for (size_t i = 0; i < values.size() && mismatches == 0.0; ++i)
      if (std::memcmp(&values[i], &back[i], sizeof(float)) != 0) mismatches += 1.0;
    return detail::make_row("pfm_roundtrip", mismatches, 0.0);
  });
}

/// Total gradient (NLL + weight decay) over concatenated (θ, β) against
/// central differences of the regularized objective, in double precision.
inline SelfcheckRow check_trainer_gradient(uint64_t seed) {
  return detail::guarded("trainer_total_grad_finite_diff", 1e-4, [&] {
    SyntheticOptions so;
    so.width = 24;
    so.height = 24;
    so.noise = 0.0;
    const SyntheticScene scene = generate_scene(seed, so);
    BasicUnaryModel<double> model;
    model.path = ModelPath::dcnf;
    model.backbone = Network<double>({3, 6, 6}, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::relu(), LayerSpec::max_pool(2),
                                                 LayerSpec::dense(4), LayerSpec::logistic(), LayerSpec::dense(1)});
    model.init(seed);
    SampleOptions opts;
    opts.slic.target_count = 12;
    opts.box_side = 8;
    opts.patch_side = 6;
    const TrainingSample sample = prepare_sample("selfcheck", scene.image, scene.depth, model, opts);
    std::mt19937_64 rng(seed);
    const PairwiseWeights beta(random_vector(rng, 3, 0.2, 1.0));
    TrainConfig cfg;
    cfg.lambda1 = 0.01;
    cfg.lambda2 = 0.02;

    const ImageGradients g = image_loss_and_grads(model, beta, sample);
    const std::vector<double> theta = [&] {
      auto p = model.parameters();
      return std::vector<double>(p.begin(), p.end());
    }();
    std::vector<double> analytic;
    for (size_t i = 0; i < theta.size(); ++i) analytic.push_back(g.grad_theta[i] + cfg.lambda1 * theta[i]);
    for (int k = 0; k < beta.size(); ++k) analytic.push_back(g.grad_beta[k] + cfg.lambda2 * beta.beta[k]);

    const std::vector<TrainingSample> samples = {sample};
    const double h = 1e-6;
    std::vector<double> fd;
    BasicUnaryModel<double> probe = model;
    for (size_t i = 0; i < theta.size(); ++i) {
      std::vector<double> tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      probe.set_parameters(tp);
      const double fp = regularized_objective(probe, beta, samples, cfg);
      probe.set_parameters(tm);
      const double fm = regularized_objective(probe, beta, samples, cfg);
      fd.push_back((fp - fm) / (2.0 * h));
    }
    for (int k = 0; k < beta.size(); ++k) {
      PairwiseWeights bp = beta, bm = beta;
      bp.beta[k] += h;
      bm.beta[k] -= h;
      fd.push_back((regularized_objective(model, bp, samples, cfg) - regularized_objective(model, bm, samples, cfg)) /
                   (2.0 * h));
    }
    return detail::make_row("trainer_total_grad_finite_diff", relative_error(analytic, fd), 1e-4);
  });
}

inline SelfcheckReport run_selfcheck(uint64_t seed = 1, const SelfcheckHooks& hooks = {}) {
  SelfcheckReport r;
  r.rows.push_back(check_log_partition(seed, hooks));
  r.rows.push_back(check_log_determinant(seed + 1));
  r.rows.push_back(check_map_stationarity(seed + 2, hooks));
  r.rows.push_back(check_cg_against_cholesky(seed + 3));
  r.rows.push_back(check_grad_z(seed + 4, hooks));
  r.rows.push_back(check_grad_beta(seed + 5, hooks));
  r.rows.push_back(check_pool_forward(seed + 6, hooks));
  r.rows.push_back(check_pool_adjoint(seed + 7, hooks));
  r.rows.push_back(check_pool_weight_sums(seed + 8));
  r.rows.push_back(check_network_gradients(seed + 9));
  r.rows.push_back(check_conv_oracle(seed + 10));
  r.rows.push_back(check_metrics_hand(seed + 11));
  r.rows.push_back(check_pfm_roundtrip(seed + 12));
  r.rows.push_back(check_trainer_gradient(seed + 13));
  return r;
}

}  // namespace dcnf
