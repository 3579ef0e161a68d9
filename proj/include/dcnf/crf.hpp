#pragma once

// Continuous CRF over superpixels with a Gaussian density in the depths.
//
// Energy:   E(y) = sum_p (y_p - z_p)^2 + sum_{(p,q)} 1/2 R_pq (y_p - y_q)^2
//                = y'Ay - 2z'y + z'z,      A = I + D - R,  R_pq = sum_k beta_k S^(k)_pq
// Because A is symmetric positive definite the partition function, the
// likelihood and its gradients are all available in closed form. Everything
// here is float64.

#include "dcnf/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dcnf {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Unordered neighbour pair, stored with p < q.
struct Edge {
  int p = 0;
  int q = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// CRF structure: nodes, neighbour edges and K similarity channels.
/// `similarities[k][e]` is S^(k) for edge e; the matrix is symmetric by
/// construction since each unordered edge is stored once.
struct CrfGraph {
  int n = 0;
  std::vector<Edge> edges;
  std::vector<std::vector<double>> similarities;
  std::vector<Point2> centroids;

  int num_channels() const { return static_cast<int>(similarities.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }

  /// Throws DimensionError / ParameterError when an invariant is broken.
  /// Similarities must be finite and within [0, 1]; zero is admitted so a
  /// channel can be switched off entirely.
  void validate() const {
    if (n < 1) throw DimensionError("CrfGraph: node count must be >= 1");
    if (!centroids.empty() && static_cast<int>(centroids.size()) != n)
      throw DimensionError("CrfGraph: centroid count differs from node count");
    std::set<Edge> seen;
    for (const Edge& e : edges) {
      if (e.p < 0 || e.q < 0 || e.p >= n || e.q >= n)
        throw DimensionError("CrfGraph: edge endpoint out of range");
      if (e.p >= e.q) throw DimensionError("CrfGraph: edges must satisfy p < q (no self loops)");
      if (!seen.insert(e).second) throw DimensionError("CrfGraph: duplicate edge");
    }
    for (const auto& channel : similarities) {
      if (channel.size() != edges.size())
        throw DimensionError("CrfGraph: similarity channel length differs from edge count");
      for (double s : channel)
        if (!std::isfinite(s) || s < 0.0 || s > 1.0)
          throw ParameterError("CrfGraph: similarity outside [0, 1]");
    }
  }

  /// Induced subgraph on `nodes` (strictly increasing ids). Node i of the
  /// result corresponds to nodes[i].
  CrfGraph subgraph(std::span<const int> nodes) const {
    std::vector<int> remap(static_cast<size_t>(n), -1);
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] < 0 || nodes[i] >= n) throw DimensionError("subgraph: node id out of range");
      if (i > 0 && nodes[i] <= nodes[i - 1]) throw DimensionError("subgraph: ids must be increasing");
      remap[static_cast<size_t>(nodes[i])] = static_cast<int>(i);
    }
    CrfGraph out;
    out.n = static_cast<int>(nodes.size());
    out.similarities.resize(similarities.size());
    for (size_t e = 0; e < edges.size(); ++e) {
      const int p = remap[static_cast<size_t>(edges[e].p)];
      const int q = remap[static_cast<size_t>(edges[e].q)];
      if (p < 0 || q < 0) continue;
      out.edges.push_back({std::min(p, q), std::max(p, q)});
      for (size_t k = 0; k < similarities.size(); ++k) out.similarities[k].push_back(similarities[k][e]);
    }
    if (!centroids.empty())
      for (int id : nodes) out.centroids.push_back(centroids[static_cast<size_t>(id)]);
    return out;
  }
};

/// Nonnegative weights combining the similarity channels into R.
struct PairwiseWeights {
  Vector beta;

  PairwiseWeights() = default;
  explicit PairwiseWeights(Vector b) : beta(std::move(b)) {}
  PairwiseWeights(std::initializer_list<double> b) : beta(static_cast<Eigen::Index>(b.size())) {
    Eigen::Index i = 0;
    for (double v : b) beta[i++] = v;
  }
  int size() const { return static_cast<int>(beta.size()); }
};

enum class SolverBackend { automatic, cholesky, conjugate_gradient };

struct SolverOptions {
  SolverBackend backend = SolverBackend::automatic;
  int cholesky_max_nodes = 20000;  // automatic switches to CG above this
  double cg_tolerance = 1e-10;
  int cg_max_iterations = 0;  // 0 means 10 * n

  friend bool operator==(const SolverOptions&, const SolverOptions&) = default;
};

/// A = I + D - R, stored with both triangles. The sparse Cholesky factor is
/// computed on first use and shared read-only between copies and threads.
class RegularizedLaplacian {
 public:
  RegularizedLaplacian() = default;

  explicit RegularizedLaplacian(SparseMatrix a, SolverOptions options = {})
      : a_(std::move(a)), options_(options), cache_(std::make_shared<Cache>()) {
    if (a_.rows() != a_.cols()) throw DimensionError("RegularizedLaplacian: matrix must be square");
    a_.makeCompressed();
  }

  const SparseMatrix& matrix() const { return a_; }
  int size() const { return static_cast<int>(a_.rows()); }
  const SolverOptions& options() const { return options_; }

  /// log|A| = 2 * sum log diag(L).
  double log_determinant() const {
    const auto& llt = factor();
    const SparseMatrix& lower = llt.matrixL().nestedExpression();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < lower.rows(); ++i) sum += std::log(lower.coeff(i, i));
    return 2.0 * sum;
  }

  Vector solve(const Vector& b) const {
    if (b.size() != a_.rows()) throw DimensionError("RegularizedLaplacian::solve: length mismatch");
    if (use_cg()) return solve_cg(b);
    Vector x = factor().solve(b);
    return x;
  }

  /// Multiple right-hand sides in one batch (always through the factor).
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    if (b.rows() != a_.rows()) throw DimensionError("RegularizedLaplacian::solve: row mismatch");
    return factor().solve(b);
  }

 private:
  using Factor = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower>;
  struct Cache {
    std::once_flag once;
    Factor llt;
    bool ok = false;
  };

  bool use_cg() const {
    switch (options_.backend) {
      case SolverBackend::cholesky: return false;
      case SolverBackend::conjugate_gradient: return true;
      case SolverBackend::automatic: break;
    }
    return size() > options_.cholesky_max_nodes;
  }

  const Factor& factor() const {
    if (!cache_) throw StateError("RegularizedLaplacian: empty matrix");
    std::call_once(cache_->once, [this] {
      cache_->llt.compute(a_);
      cache_->ok = cache_->llt.info() == Eigen::Success;
    });
    if (!cache_->ok)
      throw NumericalError("Cholesky factorization failed: A is not positive definite "
                           "(negative beta or corrupted similarities?)");
    return cache_->llt;
  }

  Vector solve_cg(const Vector& b) const {
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(options_.cg_tolerance);
    cg.setMaxIterations(options_.cg_max_iterations > 0 ? options_.cg_max_iterations : 10 * size());
    cg.compute(a_);
    Vector x = cg.solve(b);
    if (cg.info() != Eigen::Success)
      throw NumericalError("conjugate gradient did not converge within " +
                           std::to_string(cg.maxIterations()) + " iterations");
    return x;
  }

  SparseMatrix a_;
  SolverOptions options_;
  std::shared_ptr<Cache> cache_;
};

namespace detail {

inline void check_weights(const CrfGraph& graph, const PairwiseWeights& weights) {
  if (weights.size() != graph.num_channels())
    throw DimensionError("beta length " + std::to_string(weights.size()) + " differs from channel count " +
                         std::to_string(graph.num_channels()));
  for (Eigen::Index k = 0; k < weights.beta.size(); ++k)
    if (!(weights.beta[k] >= 0.0) || !std::isfinite(weights.beta[k]))
      throw ParameterError("beta_" + std::to_string(k) + " must be finite and >= 0");
}

inline void check_length(const Vector& v, int n, const char* what) {
  if (v.size() != n)
    throw DimensionError(std::string(what) + ": length " + std::to_string(v.size()) + " != node count " +
                         std::to_string(n));
}

/// sum_e S_e (u_p - u_q)^2 == u' J u for the Laplacian J of one channel.
inline double laplacian_quadratic(const CrfGraph& graph, const std::vector<double>& s, const Vector& u) {
  double sum = 0.0;
  for (size_t e = 0; e < graph.edges.size(); ++e) {
    const double d = u[graph.edges[e].p] - u[graph.edges[e].q];
    sum += s[e] * d * d;
  }
  return sum;
}

}  // namespace detail

/// Builds A = I + D - R with R_pq = sum_k beta_k S^(k)_pq.
inline RegularizedLaplacian assemble_laplacian(const CrfGraph& graph, const PairwiseWeights& weights,
                                               SolverOptions options = {}) {
  graph.validate();
  detail::check_weights(graph, weights);
  std::vector<double> diagonal(static_cast<size_t>(graph.n), 1.0);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(graph.edges.size() * 2 + static_cast<size_t>(graph.n));
  for (size_t e = 0; e < graph.edges.size(); ++e) {
    double r = 0.0;
    for (int k = 0; k < graph.num_channels(); ++k) r += weights.beta[k] * graph.similarities[static_cast<size_t>(k)][e];
    if (r == 0.0) continue;
    const auto [p, q] = graph.edges[e];
    diagonal[static_cast<size_t>(p)] += r;
    diagonal[static_cast<size_t>(q)] += r;
    triplets.emplace_back(p, q, -r);
    triplets.emplace_back(q, p, -r);
  }
  for (int i = 0; i < graph.n; ++i) triplets.emplace_back(i, i, diagonal[static_cast<size_t>(i)]);
  SparseMatrix a(graph.n, graph.n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  return RegularizedLaplacian(std::move(a), options);
}

/// log Z = (n/2) log(pi) - (1/2) log|A| + z'A^{-1}z - z'z.
inline double log_partition(const RegularizedLaplacian& a, const Vector& z) {
  detail::check_length(z, a.size(), "log_partition");
  const Vector u = a.solve(z);
  const double n = static_cast<double>(a.size());
  return 0.5 * n * std::log(std::numbers::pi) - 0.5 * a.log_determinant() + z.dot(u) - z.dot(z);
}

/// E(y, x) = y'Ay - 2z'y + z'z.
inline double energy(const RegularizedLaplacian& a, const Vector& y, const Vector& z) {
  detail::check_length(y, a.size(), "energy");
  detail::check_length(z, a.size(), "energy");
  return y.dot(a.matrix() * y) - 2.0 * z.dot(y) + z.dot(z);
}

/// -log Pr(y|x) = y'Ay - 2z'y + z'A^{-1}z - (1/2) log|A| + (n/2) log(pi).
inline double negative_log_likelihood(const Vector& y, const Vector& z, const RegularizedLaplacian& a) {
  detail::check_length(y, a.size(), "negative_log_likelihood");
  detail::check_length(z, a.size(), "negative_log_likelihood");
  const Vector u = a.solve(z);
  const double n = static_cast<double>(a.size());
  return y.dot(a.matrix() * y) - 2.0 * z.dot(y) + z.dot(u) - 0.5 * a.log_determinant() +
         0.5 * n * std::log(std::numbers::pi);
}

/// y* = A^{-1} z by a linear solve.
inline Vector map_infer(const RegularizedLaplacian& a, const Vector& z) {
  detail::check_length(z, a.size(), "map_infer");
  return a.solve(z);
}

/// d NLL / dz = 2 (A^{-1} z - y).
inline Vector grad_nll_wrt_z(const Vector& y, const Vector& z, const RegularizedLaplacian& a) {
  detail::check_length(y, a.size(), "grad_nll_wrt_z");
  detail::check_length(z, a.size(), "grad_nll_wrt_z");
  return 2.0 * (a.solve(z) - y);
}

/// Entries of A^{-1} needed by the trace terms: diagonal and edge positions.
/// Columns are obtained by batched solves for every node that some edge touches.
struct InverseOnEdges {
  std::vector<double> diagonal;   // per node, NaN for untouched nodes
  std::vector<double> off_edge;   // per edge, (A^{-1})_pq
};

inline InverseOnEdges inverse_on_edges(const RegularizedLaplacian& a, const CrfGraph& graph) {
  InverseOnEdges out;
  out.diagonal.assign(static_cast<size_t>(graph.n), std::numeric_limits<double>::quiet_NaN());
  out.off_edge.assign(graph.edges.size(), 0.0);
  std::vector<int> touched;
  std::vector<int> column_of(static_cast<size_t>(graph.n), -1);
  for (const Edge& e : graph.edges)
    for (int v : {e.p, e.q})
      if (column_of[static_cast<size_t>(v)] < 0) {
        column_of[static_cast<size_t>(v)] = static_cast<int>(touched.size());
        touched.push_back(v);
      }
  if (touched.empty()) return out;
  constexpr int kBatch = 256;
  std::vector<Eigen::MatrixXd> blocks;
  for (size_t start = 0; start < touched.size(); start += kBatch) {
    const size_t count = std::min<size_t>(kBatch, touched.size() - start);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(graph.n, static_cast<Eigen::Index>(count));
    for (size_t c = 0; c < count; ++c) rhs(touched[start + c], static_cast<Eigen::Index>(c)) = 1.0;
    blocks.push_back(a.solve(rhs));
  }
  auto column = [&](int v) {
    const int c = column_of[static_cast<size_t>(v)];
    return blocks[static_cast<size_t>(c / kBatch)].col(c % kBatch);
  };
  for (int v : touched) out.diagonal[static_cast<size_t>(v)] = column(v)[v];
  for (size_t e = 0; e < graph.edges.size(); ++e)
    out.off_edge[e] = column(graph.edges[e].p)[graph.edges[e].q];
  return out;
}

/// d NLL / d beta_k = y'J_k y - z'A^{-1} J_k A^{-1} z - (1/2) Tr(A^{-1} J_k),
/// where J_k is the graph Laplacian of similarity channel k.
inline Vector grad_nll_wrt_beta(const Vector& y, const Vector& z, const RegularizedLaplacian& a,
                                const CrfGraph& graph) {
  detail::check_length(y, a.size(), "grad_nll_wrt_beta");
  detail::check_length(z, a.size(), "grad_nll_wrt_beta");
  if (graph.n != a.size()) throw DimensionError("grad_nll_wrt_beta: graph and A sizes differ");
  const Vector u = a.solve(z);
  const InverseOnEdges inv = inverse_on_edges(a, graph);
  Vector grad(graph.num_channels());
  for (int k = 0; k < graph.num_channels(); ++k) {
    const auto& s = graph.similarities[static_cast<size_t>(k)];
    double trace = 0.0;
    for (size_t e = 0; e < graph.edges.size(); ++e) {
      const auto [p, q] = graph.edges[e];
      trace += s[e] * (inv.diagonal[static_cast<size_t>(p)] + inv.diagonal[static_cast<size_t>(q)] - 2.0 * inv.off_edge[e]);
    }
    grad[k] = detail::laplacian_quadratic(graph, s, y) - detail::laplacian_quadratic(graph, s, u) - 0.5 * trace;
  }
  return grad;
}

/// NLL and both gradients sharing one factorization and one solve for A^{-1}z.
struct CrfLikelihood {
  double nll = 0.0;
  Vector grad_z;
  Vector grad_beta;
  Vector map;  // A^{-1} z
};

inline CrfLikelihood evaluate_likelihood(const CrfGraph& graph, const PairwiseWeights& weights, const Vector& y,
                                         const Vector& z, SolverOptions options = {}) {
  const RegularizedLaplacian a = assemble_laplacian(graph, weights, options);
  detail::check_length(y, a.size(), "evaluate_likelihood");
  detail::check_length(z, a.size(), "evaluate_likelihood");
  CrfLikelihood out;
  out.map = a.solve(z);
  const double n = static_cast<double>(graph.n);
  out.nll = y.dot(a.matrix() * y) - 2.0 * z.dot(y) + z.dot(out.map) - 0.5 * a.log_determinant() +
            0.5 * n * std::log(std::numbers::pi);
  out.grad_z = 2.0 * (out.map - y);
  out.grad_beta = grad_nll_wrt_beta(y, z, a, graph);
  return out;
}

}  // namespace dcnf
