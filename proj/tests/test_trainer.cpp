#include "dcnf/synth.hpp"
#include "dcnf/trainer.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace dcnf;

namespace {

BasicUnaryModel<double> tiny_model(uint64_t seed) {
  BasicUnaryModel<double> model;
  model.path = ModelPath::dcnf;
  model.backbone = Network<double>({3, 6, 6}, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::relu(), LayerSpec::max_pool(2),
                                               LayerSpec::dense(4), LayerSpec::logistic(), LayerSpec::dense(1)});
  model.init(seed);
  return model;
}

SampleOptions tiny_options(int superpixels = 12) {
  SampleOptions o;
  o.slic.target_count = superpixels;
  o.box_side = 8;
  o.patch_side = 6;
  return o;
}

SyntheticScene small_scene(uint64_t seed, int side = 24) {
  SyntheticOptions so;
  so.width = side;
  so.height = side;
  return generate_scene(seed, so);
}

std::vector<double> as_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

std::vector<TrainingSample> fcsp_set(const UnaryModel& model, int count, uint64_t seed) {
  SampleOptions o;
  o.slic.target_count = 60;
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    const SyntheticScene sc = synthetic_dataset_scene(seed, false, i);
    out.push_back(prepare_sample("s" + std::to_string(i), sc.image, sc.depth, model, o));
  }
  return out;
}

}  // namespace

TEST(LearningRate, StepSchedule) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  EXPECT_EQ(learning_rate_at(cfg, 1), 1e-3);
  EXPECT_EQ(learning_rate_at(cfg, 20), 1e-3);
  EXPECT_NEAR(learning_rate_at(cfg, 21), 0.6e-3, 1e-18);
  EXPECT_NEAR(learning_rate_at(cfg, 40), 0.6e-3, 1e-18);
  EXPECT_NEAR(learning_rate_at(cfg, 41), 0.36e-3, 1e-18);
  EXPECT_NEAR(learning_rate_at(cfg, 60), 0.36e-3, 1e-18);
}

TEST(TrainConfig, ValidateRejectsBadValues) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ParameterError);
  };
  bad([](TrainConfig& c) { c.learning_rate = 0.0; });
  bad([](TrainConfig& c) { c.momentum = 1.0; });
  bad([](TrainConfig& c) { c.lambda2 = -1.0; });
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.initial_beta = -0.1; });
}

TEST(SuperpixelLabels, MeanLogDepthOfValidPixels) {
  std::vector<int> labels(16 * 16, 0);
  for (int i = 128; i < 256; ++i) labels[static_cast<size_t>(i)] = 1;
  const Segmentation seg = Segmentation::from_label_map(16, 16, labels);
  DepthField gt(16, 16, 2.0);
  for (int i = 0; i < 64; ++i) gt.depth[static_cast<size_t>(i)] = 8.0;
  for (int i = 128; i < 256; ++i) {
    gt.depth[static_cast<size_t>(i)] = 0.0;
    gt.valid[static_cast<size_t>(i)] = 0;
  }
  const auto [y, labeled] = superpixel_labels(seg, gt);
  EXPECT_NEAR(y[0], 0.5 * (std::log(8.0) + std::log(2.0)), 1e-14);
  EXPECT_EQ(labeled[0], 1);
  EXPECT_EQ(labeled[1], 0);
}

TEST(SgdStep, ZeroGradientOnlyDecaysVelocity) {
  UnaryModel model = default_fcsp_model(4, 3);
  TrainState state(model, 3, 0.5);
  TrainConfig cfg;
  cfg.lambda1 = cfg.lambda2 = 0.0;
  for (size_t i = 0; i < state.velocity_theta.size(); ++i) state.velocity_theta[i] = 0.0;
  state.velocity_beta = Vector::Constant(3, 0.1);
  const auto before = state.model.parameters();
  sgd_step(state, std::vector<double>(model.num_params(), 0.0), Vector::Zero(3), cfg, 0.01);
  EXPECT_EQ(state.model.parameters(), before);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(state.velocity_beta[k], 0.09, 1e-15);
    EXPECT_NEAR(state.beta.beta[k], 0.59, 1e-15);
  }
}

TEST(SgdStep, ZeroLearningRateLeavesParametersUnchanged) {
  UnaryModel model = default_fcsp_model(4, 4);
  TrainState state(model, 3, 0.5);
  std::mt19937_64 rng(71);
  std::vector<double> g(model.num_params());
  for (double& v : g) v = std::normal_distribution<double>()(rng);
  const auto before = state.model.parameters();
  sgd_step(state, g, Vector::Constant(3, 2.0), TrainConfig{}, 0.0);
  EXPECT_EQ(state.model.parameters(), before);
  EXPECT_EQ(state.beta.beta, Vector::Constant(3, 0.5));
}

TEST(SgdStep, BetaProjectedOntoNonNegative) {
  TrainState state(default_fcsp_model(4, 5), 3, 0.01);
  TrainConfig cfg;
  sgd_step(state, std::vector<double>(state.model.num_params(), 0.0), (Vector(3) << 100.0, -100.0, 0.0).finished(), cfg,
           1.0);
  EXPECT_EQ(state.beta.beta[0], 0.0);
  EXPECT_GT(state.beta.beta[1], 0.01);
  EXPECT_GE(state.beta.beta[2], 0.0);
}

TEST(SgdStep, MomentumUpdateMatchesHandComputation) {
  TrainState state(default_fcsp_model(4, 6), 1, 0.5);
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.lambda2 = 0.1;
  const auto zeros = std::vector<double>(state.model.num_params(), 0.0);
  sgd_step(state, zeros, Vector::Constant(1, 1.0), cfg, 0.01);
  // v = -0.01 (1 + 0.05) ; β = 0.5 + v
  EXPECT_NEAR(state.velocity_beta[0], -0.0105, 1e-15);
  EXPECT_NEAR(state.beta.beta[0], 0.4895, 1e-15);
  sgd_step(state, zeros, Vector::Constant(1, 1.0), cfg, 0.01);
  const double v2 = 0.9 * -0.0105 - 0.01 * (1.0 + 0.1 * 0.4895);
  EXPECT_NEAR(state.velocity_beta[0], v2, 1e-15);
  EXPECT_NEAR(state.beta.beta[0], 0.4895 + v2, 1e-15);
}

TEST(SgdStep, QuadraticConverges) {
  // β-only objective (β - 3)^2 reached through the same update rule.
  TrainState state(default_fcsp_model(4, 7), 1, 0.0);
  TrainConfig cfg;
  cfg.lambda2 = 0.0;
  cfg.momentum = 0.5;
  const auto zeros = std::vector<double>(state.model.num_params(), 0.0);
  for (int it = 0; it < 100; ++it)
    sgd_step(state, zeros, Vector::Constant(1, 2.0 * (state.beta.beta[0] - 3.0)), cfg, 0.25);
  EXPECT_NEAR(state.beta.beta[0], 3.0, 1e-3);
}

TEST(SgdStep, NonFiniteGradientAbortsWithoutChange) {
  TrainState state(default_fcsp_model(4, 8), 3, 0.5);
  std::vector<double> g(state.model.num_params(), 0.0);
  g[3] = std::numeric_limits<double>::quiet_NaN();
  const auto before = state.model.parameters();
  EXPECT_THROW(sgd_step(state, g, Vector::Zero(3), TrainConfig{}, 0.1, {}, "img"), NumericalError);
  EXPECT_EQ(state.model.parameters(), before);
  g[3] = 0.0;
  EXPECT_THROW(sgd_step(state, g, Vector::Constant(3, INFINITY), TrainConfig{}, 0.1), NumericalError);
  EXPECT_EQ(state.beta.beta, Vector::Constant(3, 0.5));
}

TEST(SgdStep, FrozenEntriesDoNotMove) {
  TrainState state(default_fcsp_model(4, 9), 3, 0.5);
  const auto mask = frozen_mask(state.model, {0, 1});
  const auto before = state.model.parameters();
  sgd_step(state, std::vector<double>(state.model.num_params(), 1.0), Vector::Zero(3), TrainConfig{}, 0.1, mask);
  const auto after = state.model.parameters();
  size_t frozen = 0;
  for (size_t i = 0; i < after.size(); ++i) {
    if (mask[i]) {
      EXPECT_EQ(after[i], before[i]);
      ++frozen;
    } else {
      EXPECT_NE(after[i], before[i]);
    }
  }
  EXPECT_EQ(frozen, state.model.backbone.param_count(0) + state.model.backbone.param_count(3));
  EXPECT_THROW(frozen_mask(state.model, {99}), ParameterError);
}

TEST(ImageLoss, IdentityCaseIsHalfNLogPi) {
  // β = 0 and a unary that reproduces the labels exactly.
  const SyntheticScene sc = small_scene(72);
  BasicUnaryModel<double> model = tiny_model(72);
  std::vector<double> theta(model.num_params(), 0.0);
  model.set_parameters(theta);
  TrainingSample s = prepare_sample("a", sc.image, sc.depth, model, tiny_options());
  s.labels.setZero();
  const ImageGradients g = image_loss_and_grads(model, PairwiseWeights(Vector::Zero(3)), s);
  EXPECT_NEAR(g.loss, 0.5 * s.seg.n * std::log(std::numbers::pi), 1e-10);
  for (double v : g.grad_theta) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(ImageLoss, SparseLabelsCoveringAllNodesMatchFullLabels) {
  const SyntheticScene sc = small_scene(73);
  const BasicUnaryModel<double> model = tiny_model(73);
  TrainingSample full = prepare_sample("a", sc.image, sc.depth, model, tiny_options());
  ASSERT_TRUE(full.fully_labeled());
  const PairwiseWeights beta{0.3, 0.7, 0.2};
  const ImageGradients a = image_loss_and_grads(model, beta, full);
  // Explicit subgraph path with every node kept.
  std::vector<int> all(static_cast<size_t>(full.seg.n));
  std::iota(all.begin(), all.end(), 0);
  TrainingSample copy = full;
  copy.graph = full.graph.subgraph(all);
  const ImageGradients b = image_loss_and_grads(model, beta, copy);
  EXPECT_NEAR(a.loss, b.loss, 1e-10 * std::abs(a.loss));
  EXPECT_LE(oracle::rel_error(a.grad_theta, b.grad_theta), 1e-10);
  EXPECT_LE(oracle::rel_error(a.grad_beta, b.grad_beta), 1e-10);
}

TEST(ImageLoss, SparseLabelsRestrictToLabeledSubgraph) {
  const SyntheticScene sc = small_scene(74);
  const BasicUnaryModel<double> model = tiny_model(74);
  TrainingSample s = prepare_sample("a", sc.image, sc.depth, model, tiny_options());
  for (size_t t = 0; t < s.labeled.size(); t += 3) s.labeled[t] = 0;
  const PairwiseWeights beta{0.4, 0.1, 0.6};
  const std::vector<int> nodes = s.labeled_nodes();

  BasicUnaryCache<double> cache;
  const Vector z = unary_forward(model, s, cache);
  Vector y(static_cast<Eigen::Index>(nodes.size())), zs(static_cast<Eigen::Index>(nodes.size()));
  for (size_t i = 0; i < nodes.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = s.labels[nodes[i]];
    zs[static_cast<Eigen::Index>(i)] = z[nodes[i]];
  }
  const CrfGraph sub = s.graph.subgraph(nodes);
  const double want = oracle::dense_nll(oracle::dense_laplacian(sub, beta.beta), y, zs);
  const ImageGradients g = image_loss_and_grads(model, beta, s);
  EXPECT_NEAR(g.loss, want, 1e-9 * std::abs(want));

  for (auto& v : s.labeled) v = 0;
  EXPECT_THROW(image_loss_and_grads(model, beta, s), DataError);
}

TEST(ImageLoss, TotalGradientMatchesFiniteDifferences) {
  for (uint64_t seed = 75; seed < 78; ++seed) {
    const SyntheticScene sc = small_scene(seed);
    const BasicUnaryModel<double> model = tiny_model(seed);
    TrainingSample s = prepare_sample("a", sc.image, sc.depth, model, tiny_options());
    if (seed == 77)
      for (size_t t = 1; t < s.labeled.size(); t += 2) s.labeled[t] = 0;
    const std::vector<TrainingSample> samples = {s};
    const PairwiseWeights beta{0.5, 0.25, 0.8};
    TrainConfig cfg;
    cfg.lambda1 = 0.01;
    cfg.lambda2 = 0.02;

    const ImageGradients g = image_loss_and_grads(model, beta, s);
    const std::vector<double> theta = model.parameters();
    std::vector<double> analytic, fd;
    for (size_t i = 0; i < theta.size(); ++i) analytic.push_back(g.grad_theta[i] + cfg.lambda1 * theta[i]);
    for (int k = 0; k < 3; ++k) analytic.push_back(g.grad_beta[k] + cfg.lambda2 * beta.beta[k]);

    const double h = 1e-6;
    BasicUnaryModel<double> probe = model;
    for (size_t i = 0; i < theta.size(); ++i) {
      std::vector<double> tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      probe.set_parameters(tp);
      const double fp = regularized_objective(probe, beta, samples, cfg);
      probe.set_parameters(tm);
      fd.push_back((fp - regularized_objective(probe, beta, samples, cfg)) / (2 * h));
    }
    for (int k = 0; k < 3; ++k) {
      PairwiseWeights bp = beta, bm = beta;
      bp.beta[k] += h;
      bm.beta[k] -= h;
      fd.push_back((regularized_objective(model, bp, samples, cfg) - regularized_objective(model, bm, samples, cfg)) /
                   (2 * h));
    }
    EXPECT_LE(oracle::rel_error(analytic, fd), 1e-4) << "seed " << seed;
  }
}

TEST(ImageLoss, FloatGradientTracksDoubleGradient) {
  const SyntheticScene sc = small_scene(78, 32);
  const UnaryModel model = default_fcsp_model(8, 78);
  const TrainingSample s = prepare_sample("a", sc.image, sc.depth, model, tiny_options(20));
  const PairwiseWeights beta{0.5, 0.5, 0.5};
  const ImageGradients gf = image_loss_and_grads(model, beta, s);
  const ImageGradients gd = image_loss_and_grads(model.cast<double>(), beta, s);
  EXPECT_LE(oracle::rel_error(gf.grad_theta, gd.grad_theta), 1e-4);
  EXPECT_LE(oracle::rel_error(gf.grad_beta, gd.grad_beta), 1e-4);
}

TEST(Train, SmallStepDecreasesObjective) {
  const UnaryModel model = default_fcsp_model(8, 79);
  const auto samples = fcsp_set(model, 1, 79);
  TrainConfig cfg;
  cfg.path = ModelPath::fcsp;
  const TrainState init(model, 3, 0.5);
  const double before = regularized_objective(init.model, init.beta, samples, cfg);
  const ImageGradients g = image_loss_and_grads(init.model.cast<double>(), init.beta, samples[0]);
  TrainState state = init;
  sgd_step(state, g.grad_theta, g.grad_beta, cfg, 1e-6);
  EXPECT_LT(regularized_objective(state.model, state.beta, samples, cfg), before);
}

TEST(Train, NllDropsAndBetaStaysFeasible) {
  const UnaryModel model = default_fcsp_model(32, 1);
  const auto samples = fcsp_set(model, 20, 1);
  TrainConfig cfg;
  cfg.path = ModelPath::fcsp;
  cfg.epochs = 20;
  TrainState state(model, 3, cfg.initial_beta);
  bool feasible = true;
  const TrainResult r = train<float>(samples, cfg, state, [&](const TrainState& s, const EpochLog&) {
    feasible = feasible && (s.beta.beta.array() >= 0.0).all();
  });
  ASSERT_EQ(r.epochs.size(), 20u);
  EXPECT_TRUE(feasible);
  EXPECT_LT(r.epochs.back().mean_nll, r.epochs.front().mean_nll);
  EXPECT_EQ(r.aborted_steps, 0);
  EXPECT_EQ(state.loss_history.size(), 20u);
  EXPECT_EQ(state.epoch, 20);
  EXPECT_NEAR(r.epochs.back().learning_rate, cfg.learning_rate, 1e-18);
}

TEST(Train, DeterministicUnderFixedSeed) {
  const UnaryModel model = default_fcsp_model(8, 80);
  const auto samples = fcsp_set(model, 4, 80);
  TrainConfig cfg;
  cfg.path = ModelPath::fcsp;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  TrainState a(model, 3, 0.5), b(model, 3, 0.5);
  train<float>(samples, cfg, a);
  train<float>(samples, cfg, b);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
  EXPECT_EQ(a.beta.beta, b.beta.beta);
}

TEST(Train, PretrainPhaseFreezesLeadingLayers) {
  const UnaryModel model = default_fcsp_model(8, 81);
  const auto samples = fcsp_set(model, 2, 81);
  TrainConfig cfg;
  cfg.path = ModelPath::fcsp;
  cfg.epochs = 1;
  cfg.pretrain_epochs = 2;
  cfg.frozen_layers = {0, 1, 2};
  TrainState state(model, 3, 0.5);
  std::vector<int> phases;
  std::vector<float> after_pretrain;
  train<float>(samples, cfg, state, [&](const TrainState& s, const EpochLog& log) {
    phases.push_back(log.phase);
    if (log.epoch == 2) after_pretrain = s.model.parameters();
  });
  EXPECT_EQ(phases, (std::vector<int>{1, 1, 2}));
  const auto mask = frozen_mask(model, cfg.frozen_layers);
  const auto init = model.parameters();
  bool moved_free = false;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) EXPECT_EQ(after_pretrain[i], init[i]);
    else moved_free = moved_free || after_pretrain[i] != init[i];
  }
  EXPECT_TRUE(moved_free);
  EXPECT_NE(state.model.parameters(), after_pretrain);
}

TEST(Train, RejectsEmptyDataset) {
  TrainState state(default_fcsp_model(4, 1), 3, 0.5);
  EXPECT_THROW(train<float>({}, TrainConfig{}, state), DataError);
}
