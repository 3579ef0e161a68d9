#pragma once

// Regularized maximum-likelihood training of the unary network θ and the
// pairwise weights β: per-image CRF likelihood, SGD with momentum and weight
// decay, projection of β onto β >= 0, step learning-rate schedule and an
// optional pre-train phase with frozen leading layers.

#include "dcnf/crf.hpp"
#include "dcnf/metrics.hpp"
#include "dcnf/similarity.hpp"
#include "dcnf/slic.hpp"
#include "dcnf/sp_pool.hpp"
#include "dcnf/unary.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace dcnf {

struct TrainConfig {
  double learning_rate = 1e-4;
  double lr_decay = 0.6;  // multiply every `lr_decay_every` epochs
  int lr_decay_every = 20;
  double momentum = 0.9;
  double lambda1 = 5e-4;  // weight decay on θ
  double lambda2 = 5e-4;  // weight decay on β
  int epochs = 60;
  uint64_t seed = 1;
  ModelPath path = ModelPath::dcnf;
  int batch_size = 1;             // images averaged per step
  double initial_beta = 0.5;      // every channel
  std::vector<int> frozen_layers; // parametric-layer indices held fixed during pre-training
  int pretrain_epochs = 0;        // phase 1 length; 0 disables the phase
  int checkpoint_every = 0;       // epochs between checkpoints (0: only the final one)

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ParameterError("weight decay must be >= 0");
    if (epochs < 1) throw ParameterError("epochs must be >= 1");
    if (!(lr_decay > 0.0) || lr_decay_every < 1) throw ParameterError("invalid learning-rate schedule");
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (!(initial_beta >= 0.0)) throw ParameterError("initial_beta must be >= 0");
    if (pretrain_epochs < 0) throw ParameterError("pretrain_epochs must be >= 0");
  }
};

/// Learning rate for a 1-based epoch within a phase.
inline double learning_rate_at(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_decay, (epoch - 1) / cfg.lr_decay_every);
}

/// One preprocessed image: superpixels, CRF graph, network inputs and
/// per-superpixel log-depth labels (natural log of meters).
struct TrainingSample {
  std::string id;
  ImageRgb image;
  Segmentation seg;
  CrfGraph graph;
  PatchBatch patches;      // dcnf input
  PoolingWeights pooling;  // fcsp input
  Vector labels;
  std::vector<uint8_t> labeled;

  std::vector<int> labeled_nodes() const {
    std::vector<int> out;
    for (size_t t = 0; t < labeled.size(); ++t)
      if (labeled[t]) out.push_back(static_cast<int>(t));
    return out;
  }
  bool fully_labeled() const { return std::all_of(labeled.begin(), labeled.end(), [](uint8_t v) { return v != 0; }); }
};

struct SampleOptions {
  SlicOptions slic;
  SimilarityConfig similarity;
  int box_side = 22;
  int patch_side = 32;

  friend bool operator==(const SampleOptions&, const SampleOptions&) = default;
};

/// Superpixel label = mean natural-log depth over its valid ground-truth
/// pixels; superpixels without any valid pixel stay unlabeled.
inline std::pair<Vector, std::vector<uint8_t>> superpixel_labels(const Segmentation& seg, const DepthField& gt) {
  if (gt.width != seg.width || gt.height != seg.height) throw DimensionError("labels: depth and segmentation sizes differ");
  Vector y = Vector::Zero(seg.n);
  std::vector<uint8_t> labeled(static_cast<size_t>(seg.n), 0);
  for (int t = 0; t < seg.n; ++t) {
    double sum = 0.0;
    int count = 0;
    for (int i : seg.pixel_lists[static_cast<size_t>(t)])
      if (gt.valid[static_cast<size_t>(i)]) {
        sum += std::log(gt.depth[static_cast<size_t>(i)]);
        ++count;
      }
    if (count > 0) {
      y[t] = sum / count;
      labeled[static_cast<size_t>(t)] = 1;
    }
  }
  return {y, labeled};
}

/// Segments, builds the graph and the network inputs for one image. Pass an
/// empty DepthField to prepare an unlabeled (inference-only) sample.
template <class Real>
TrainingSample prepare_sample(std::string id, const ImageRgb& image, const DepthField& gt,
                              const BasicUnaryModel<Real>& model, const SampleOptions& options) {
  image.validate();
  TrainingSample s;
  s.id = std::move(id);
  s.image = image;
  s.seg = slic_segment(image, options.slic);
  s.graph = build_graph(image, s.seg, options.similarity);
  if (model.path == ModelPath::dcnf) {
    s.patches = extract_patches(image, s.seg, options.box_side, model.patch_side());
  } else {
    const Shape grid = model.backbone.output_shape_for(image.height(), image.width());
    s.pooling = build_pooling_weights(s.seg, grid.h, grid.w);
  }
  if (gt.size() > 0) {
    auto [y, labeled] = superpixel_labels(s.seg, gt);
    s.labels = std::move(y);
    s.labeled = std::move(labeled);
  } else {
    s.labels = Vector::Zero(s.seg.n);
    s.labeled.assign(static_cast<size_t>(s.seg.n), 0);
  }
  return s;
}

template <class Real>
Vector unary_forward(const BasicUnaryModel<Real>& model, const TrainingSample& sample, BasicUnaryCache<Real>& cache) {
  return model.path == ModelPath::dcnf ? unary_forward_patches(model, sample.patches, cache)
                                       : unary_forward_fcsp(model, sample.image, sample.pooling, cache);
}

template <class Real>
struct BasicTrainState {
  BasicUnaryModel<Real> model;
  PairwiseWeights beta;
  std::vector<double> velocity_theta;
  Vector velocity_beta;
  int epoch = 0;
  std::vector<double> loss_history;

  BasicTrainState() = default;
  BasicTrainState(BasicUnaryModel<Real> m, int channels, double initial_beta)
      : model(std::move(m)),
        beta(Vector::Constant(channels, initial_beta)),
        velocity_theta(model.num_params(), 0.0),
        velocity_beta(Vector::Zero(channels)) {}
};

using TrainState = BasicTrainState<float>;

struct ImageGradients {
  double loss = 0.0;
  std::vector<double> grad_theta;
  Vector grad_beta;
};

/// NLL of one image and its gradients w.r.t. θ and β. With sparse labels the
/// CRF is restricted to the subgraph of labeled superpixels.
template <class Real>
ImageGradients image_loss_and_grads(const BasicUnaryModel<Real>& model, const PairwiseWeights& beta,
                                    const TrainingSample& sample, const SolverOptions& solver = {}) {
  const std::vector<int> nodes = sample.labeled_nodes();
  if (nodes.empty()) throw DataError("image " + sample.id + " has no labeled superpixels");
  for (int t : nodes)
    if (!std::isfinite(sample.labels[t])) throw DataError("image " + sample.id + " has a non-finite label");

  BasicUnaryCache<Real> cache;
  const Vector z = unary_forward(model, sample, cache);
  ImageGradients out;
  Vector upstream = Vector::Zero(z.size());
  if (static_cast<int>(nodes.size()) == sample.seg.n) {
    const CrfLikelihood lik = evaluate_likelihood(sample.graph, beta, sample.labels, z, solver);
    out.loss = lik.nll;
    out.grad_beta = lik.grad_beta;
    upstream = lik.grad_z;
  } else {
    const CrfGraph sub = sample.graph.subgraph(nodes);
    Vector y(static_cast<Eigen::Index>(nodes.size()));
    Vector zs(static_cast<Eigen::Index>(nodes.size()));
    for (size_t i = 0; i < nodes.size(); ++i) {
      y[static_cast<Eigen::Index>(i)] = sample.labels[nodes[i]];
      zs[static_cast<Eigen::Index>(i)] = z[nodes[i]];
    }
    const CrfLikelihood lik = evaluate_likelihood(sub, beta, y, zs, solver);
    out.loss = lik.nll;
    out.grad_beta = lik.grad_beta;
    for (size_t i = 0; i < nodes.size(); ++i) upstream[nodes[i]] = lik.grad_z[static_cast<Eigen::Index>(i)];
  }
  out.grad_theta = unary_backward(model, cache, upstream);
  return out;
}

/// (λ1/2)||θ||² + (λ2/2)||β||² + Σ NLL over the samples.
template <class Real>
double regularized_objective(const BasicUnaryModel<Real>& model, const PairwiseWeights& beta,
                             const std::vector<TrainingSample>& samples, const TrainConfig& cfg) {
  double theta_sq = 0.0;
  for (Real v : model.parameters()) theta_sq += static_cast<double>(v) * static_cast<double>(v);
  double total = 0.5 * cfg.lambda1 * theta_sq + 0.5 * cfg.lambda2 * beta.beta.squaredNorm();
  for (const auto& s : samples) total += image_loss_and_grads(model, beta, s).loss;
  return total;
}

/// Per-parameter mask of θ entries that must not move.
template <class Real>
std::vector<uint8_t> frozen_mask(const BasicUnaryModel<Real>& model, const std::vector<int>& frozen_layers) {
  std::vector<uint8_t> mask(model.num_params(), 0);
  const auto layers = model.parametric_layers();
  for (int idx : frozen_layers) {
    if (idx < 0 || idx >= static_cast<int>(layers.size()))
      throw ParameterError("frozen layer index " + std::to_string(idx) + " out of range");
    const auto [net, layer] = layers[static_cast<size_t>(idx)];
    const size_t off = model.theta_offset(net, layer);
    const size_t count = (net == 0 ? model.backbone : model.head).param_count(layer);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(off), count, uint8_t{1});
  }
  return mask;
}

/// v <- momentum v - lr (g + λ p);  p <- p + v;  then β <- max(β, 0).
/// Non-finite gradients abort the step (state untouched) with NumericalError.
template <class Real>
void sgd_step(BasicTrainState<Real>& state, const std::vector<double>& grad_theta, const Vector& grad_beta,
              const TrainConfig& cfg, double lr, const std::vector<uint8_t>& frozen = {},
              const std::string& source = "") {
  if (grad_theta.size() != state.model.num_params() || grad_beta.size() != state.beta.beta.size())
    throw DimensionError("sgd_step: gradient shapes differ from parameter shapes");
  const bool finite = std::all_of(grad_theta.begin(), grad_theta.end(), [](double g) { return std::isfinite(g); }) &&
                      grad_beta.allFinite();
  if (!finite) throw NumericalError("non-finite gradient from image '" + source + "'; step aborted");
  if (state.velocity_theta.size() != grad_theta.size()) state.velocity_theta.assign(grad_theta.size(), 0.0);
  if (state.velocity_beta.size() != grad_beta.size()) state.velocity_beta = Vector::Zero(grad_beta.size());

  std::vector<Real> theta = state.model.parameters();
  for (size_t i = 0; i < theta.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    double& v = state.velocity_theta[i];
    v = cfg.momentum * v - lr * (grad_theta[i] + cfg.lambda1 * static_cast<double>(theta[i]));
    theta[i] = static_cast<Real>(static_cast<double>(theta[i]) + v);
  }
  state.model.set_parameters(theta);
  for (Eigen::Index k = 0; k < grad_beta.size(); ++k) {
    double& v = state.velocity_beta[k];
    v = cfg.momentum * v - lr * (grad_beta[k] + cfg.lambda2 * state.beta.beta[k]);
    state.beta.beta[k] = std::max(0.0, state.beta.beta[k] + v);
  }
}

struct EpochLog {
  int epoch = 0;  // 1-based over the whole run
  int phase = 2;  // 1: pre-train with frozen layers, 2: all layers
  double learning_rate = 0.0;
  double mean_nll = 0.0;
  double seconds = 0.0;
  int aborted_steps = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int aborted_steps = 0;
};

using EpochCallback = std::function<void(const TrainState&, const EpochLog&)>;

/// Shuffled (seeded) epochs of per-image (or averaged mini-batch) steps.
/// Phase 1 runs `pretrain_epochs` with `frozen_layers` fixed, phase 2 runs
/// `epochs` with everything trainable; each phase restarts the lr schedule.
template <class Real>
TrainResult train(const std::vector<TrainingSample>& samples, const TrainConfig& cfg, BasicTrainState<Real>& state,
                  const std::function<void(const BasicTrainState<Real>&, const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (samples.empty()) throw DataError("train: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  auto run_phase = [&](int phase, int epochs, const std::vector<uint8_t>& frozen) {
    for (int e = 1; e <= epochs; ++e) {
      const auto start = std::chrono::steady_clock::now();
      const double lr = learning_rate_at(cfg, e);
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      int loss_count = 0;
      int aborted = 0;
      for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
        std::vector<double> g_theta(state.model.num_params(), 0.0);
        Vector g_beta = Vector::Zero(state.beta.size());
        std::string ids;
        for (size_t i = b; i < end; ++i) {
          const TrainingSample& s = samples[order[i]];
          const ImageGradients g = image_loss_and_grads(state.model, state.beta, s);
          loss_sum += g.loss;
          ++loss_count;
          for (size_t j = 0; j < g_theta.size(); ++j) g_theta[j] += g.grad_theta[j];
          g_beta += g.grad_beta;
          ids += (ids.empty() ? "" : ",") + s.id;
        }
        const double inv = 1.0 / static_cast<double>(end - b);
        for (double& v : g_theta) v *= inv;
        g_beta *= inv;
        try {
          sgd_step(state, g_theta, g_beta, cfg, lr, frozen, ids);
        } catch (const NumericalError& err) {
          std::cerr << "warning: " << err.what() << '\n';
          ++aborted;
        }
      }
      ++state.epoch;
      EpochLog log;
      log.epoch = state.epoch;
      log.phase = phase;
      log.learning_rate = lr;
      log.mean_nll = loss_sum / std::max(1, loss_count);
      log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.aborted_steps = aborted;
      result.aborted_steps += aborted;
      state.loss_history.push_back(log.mean_nll);
      result.epochs.push_back(log);
      if (on_epoch) on_epoch(state, log);
    }
  };

  if (cfg.pretrain_epochs > 0 && !cfg.frozen_layers.empty())
    run_phase(1, cfg.pretrain_epochs, frozen_mask(state.model, cfg.frozen_layers));
  run_phase(2, cfg.epochs, {});
  return result;
}

/// Mean per-image NLL with the current parameters.
template <class Real>
double evaluate_mean_nll(const BasicUnaryModel<Real>& model, const PairwiseWeights& beta,
                         const std::vector<TrainingSample>& samples) {
  double sum = 0.0;
  for (const auto& s : samples) sum += image_loss_and_grads(model, beta, s).loss;
  return sum / static_cast<double>(samples.size());
}

/// MAP log-depths for every superpixel of a prepared sample.
template <class Real>
Vector predict_log_depth(const BasicUnaryModel<Real>& model, const PairwiseWeights& beta, const TrainingSample& sample,
                         const SolverOptions& solver = {}) {
  BasicUnaryCache<Real> cache;
  const Vector z = unary_forward(model, sample, cache);
  return map_infer(assemble_laplacian(sample.graph, beta, solver), z);
}

}  // namespace dcnf
