// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include "dcnf/checkpoint.hpp"
#include "dcnf/config.hpp"
#include "dcnf/crf.hpp"
#include "dcnf/metrics.hpp"
#include "dcnf/sp_pool.hpp"
#include "dcnf/synth.hpp"
#include "dcnf/trainer.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>

#include <unistd.h>

using namespace dcnf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome log_partition_vs_integration() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst_quad = 0.0, worst_mc = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int n = 1 + i % 2;
    const CrfGraph g = oracle::random_graph(rng, n, 3, 0);
    const Vector beta = oracle::uniform_vector(rng, 3, 0.0, 2.0);
    const Vector z = oracle::uniform_vector(rng, n, -2.0, 2.0);
    const double got = log_partition(assemble_laplacian(g, PairwiseWeights(beta)), z);
    const double want = oracle::quadrature_log_partition(oracle::dense_laplacian(g, beta), z);
    worst_quad = std::max(worst_quad, std::abs(got - want) / std::abs(want));
  }
  for (int i = 0; i < 20; ++i) {
    const CrfGraph g = oracle::random_graph(rng, 3, 3, 1);
    const Vector beta = oracle::uniform_vector(rng, 3, 0.0, 2.0);
    const Vector z = oracle::uniform_vector(rng, 3, -1.0, 1.0);
    const Eigen::MatrixXd dense = oracle::dense_laplacian(g, beta);
    const double log_z = log_partition(assemble_laplacian(g, PairwiseWeights(beta)), z);
    const double mass = oracle::monte_carlo_mass(
        [&](const Vector& y) { return oracle::dense_energy(dense, y, z) + log_z; }, 3, 0.8, 400000, 200 + i,
        dense.ldlt().solve(z));
    worst_mc = std::max(worst_mc, std::abs(mass - 1.0));
  }
  const double t = seconds_since(t0);
  return {worst_quad <= 1e-6 && worst_mc <= 1e-2 && t < 60.0,
          fmt("quadrature err %.2e, MC |mass-1| %.2e, %.1fs", worst_quad, worst_mc, t)};
}

Outcome crf_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(102);
  double worst_z = 0.0, worst_b = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int n = 3 + i % 10;
    const CrfGraph g = oracle::random_graph(rng, n, 3, n);
    const Vector beta = oracle::uniform_vector(rng, 3, 0.1, 2.0);
    const Vector y = oracle::uniform_vector(rng, n, -2.0, 2.0);
    const Vector z = oracle::uniform_vector(rng, n, -2.0, 2.0);
    const RegularizedLaplacian a = assemble_laplacian(g, PairwiseWeights(beta));
    const Vector fd_z = oracle::central_difference([&](const Vector& zz) { return oracle::dense_nll(oracle::dense_laplacian(g, beta), y, zz); }, z, 1e-6);
    const Vector fd_b = oracle::central_difference([&](const Vector& bb) { return oracle::dense_nll(oracle::dense_laplacian(g, bb), y, z); }, beta, 1e-6);
    worst_z = std::max(worst_z, oracle::rel_error(grad_nll_wrt_z(y, z, a), fd_z));
    worst_b = std::max(worst_b, oracle::rel_error(grad_nll_wrt_beta(y, z, a, g), fd_b));
  }
  const double t = seconds_since(t0);
  return {worst_z <= 1e-5 && worst_b <= 1e-4 && t < 30.0,
          fmt("grad_z rel %.2e, grad_beta rel %.2e, %.2fs", worst_z, worst_b, t)};
}

Outcome map_inference() {
  std::mt19937_64 rng(103);
  double worst_res = 0.0, worst_gd = 0.0;
  bool identity = true;
  for (int i = 0; i < 20; ++i) {
    const int n = 10 + 10 * i;
    const CrfGraph g = oracle::random_graph(rng, n, 3, n);
    const Vector beta = oracle::uniform_vector(rng, 3, 0.0, 2.0);
    const Vector z = oracle::uniform_vector(rng, n, -3.0, 3.0);
    const RegularizedLaplacian a = assemble_laplacian(g, PairwiseWeights(beta));
    const Vector y = map_infer(a, z);
    const Eigen::MatrixXd dense = oracle::dense_laplacian(g, beta);
    worst_res = std::max(worst_res, (dense * y - z).lpNorm<Eigen::Infinity>());
    worst_gd = std::max(worst_gd, (y - oracle::gradient_descent_minimizer(dense, z)).lpNorm<Eigen::Infinity>());
    identity = identity && map_infer(assemble_laplacian(g, PairwiseWeights(Vector::Zero(3))), z) == z;
  }
  return {worst_res <= 1e-10 && worst_gd <= 1e-6 && identity,
          fmt("residual %.2e, vs gradient descent %.2e, beta=0 identity %s", worst_res, worst_gd, identity ? "exact" : "broken")};
}

Outcome pooling() {
  std::mt19937_64 rng(104);
  double worst_oracle = 0.0, worst_adj = 0.0, worst_sum = 0.0;
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    const int W = 30 + 7 * i, H = 24 + 5 * i;
    const Segmentation seg = oracle::voronoi_segmentation(rng, W, H, 10 + 6 * i);
    const int h = (H + 1) / 2 - i % 3, w = (W + 3) / 4 + i;
    const PoolingWeights weights = build_pooling_weights(seg, h, w);
    BasicFeatureGrid<double> grid(h, w, 4);
    for (double& v : grid.data) v = uni(rng);
    const auto got = pool_forward(grid, weights);
    const auto want = oracle::upsample_mask_average(grid, seg);
    for (size_t k = 0; k < got.size(); ++k) worst_oracle = std::max(worst_oracle, std::abs(got[k] - want[k]));
    std::vector<double> u(got.size());
    for (double& v : u) v = uni(rng);
    const auto back = pool_backward(u, weights, 4);
    double lhs = 0.0, rhs = 0.0;
    for (size_t k = 0; k < u.size(); ++k) lhs += got[k] * u[k];
    for (size_t k = 0; k < grid.data.size(); ++k) rhs += grid.data[k] * back.data[k];
    worst_adj = std::max(worst_adj, std::abs(lhs - rhs));
    for (const auto& entries : weights.per_node) {
      double s = 0.0;
      for (const auto& e : entries) s += e.weight;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  return {worst_oracle <= 1e-6 && worst_adj <= 1e-10 && worst_sum <= 1e-12,
          fmt("oracle %.2e, adjoint %.2e, weight sums %.2e", worst_oracle, worst_adj, worst_sum)};
}

Outcome network_gradients() {
  std::mt19937_64 rng(105);
  double worst = 0.0;
  const UnaryModel dcnf_model = default_dcnf_model(16, 5);
  const UnaryModel fcsp_model = default_fcsp_model(8, 5);
  std::vector<std::pair<Network<float>, Shape>> nets = {
      {dcnf_model.backbone, {3, 16, 16}},
      {fcsp_model.backbone, {3, 12, 14}},
      {fcsp_model.head, {8, 1, 1}},
      {Network<float>({2, 9, 9}, {LayerSpec::conv(3, 3, 2, 1), LayerSpec::relu(), LayerSpec::max_pool(2),
                                  LayerSpec::dense(4), LayerSpec::logistic(), LayerSpec::dense(1)}),
       {2, 9, 9}},
  };
  for (auto& [net, shape] : nets)
    for (int trial = 0; trial < 3; ++trial) {
      Network<float> probe(shape, net.layers());
      oracle::randomize(probe, rng, 0.5);
      worst = std::max(worst, oracle::network_gradient_error(probe, oracle::random_input(rng, shape.size()), shape, rng));
    }
  return {worst <= 1e-4, fmt("float analytic vs double central differences, worst rel %.2e", worst)};
}

struct SyntheticSet {
  std::vector<TrainingSample> samples;
  std::vector<DepthField> depth;
};

SyntheticSet synthetic_set(const UnaryModel& model, const RunConfig& cfg, bool test_split, int count) {
  SyntheticSet set;
  for (int i = 0; i < count; ++i) {
    const SyntheticScene sc = synthetic_dataset_scene(1, test_split, i);
    set.samples.push_back(prepare_sample((test_split ? "test_" : "train_") + std::to_string(i), sc.image, sc.depth,
                                         model, cfg.sample_options(sc.image.width(), sc.image.height())));
    set.depth.push_back(sc.depth);
  }
  return set;
}

struct OverfitRun {
  TrainState state;
  TrainResult result;
  double rel = 0.0;
  double seconds = 0.0;
};

OverfitRun overfit_run(ModelPath path) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.train.path = path;
  const UnaryModel model = cfg.make_model();
  const SyntheticSet set = synthetic_set(model, cfg, false, 20);
  OverfitRun run{TrainState(model, 3, cfg.train.initial_beta), {}, 0.0, 0.0};
  run.result = train<float>(set.samples, cfg.train, run.state);
  MetricsAccumulator acc;
  for (size_t i = 0; i < set.samples.size(); ++i)
    acc.add(render_depth(set.samples[i].seg, predict_log_depth(run.state.model, run.state.beta, set.samples[i])),
            set.depth[i]);
  run.rel = acc.report().rel;
  run.seconds = seconds_since(t0);
  return run;
}

std::optional<PairwiseWeights> learned_fcsp_beta;

Outcome overfit(ModelPath path) {
  const OverfitRun run = overfit_run(path);
  if (path == ModelPath::fcsp) learned_fcsp_beta = run.state.beta;
  const auto& epochs = run.result.epochs;
  const double first = epochs.front().mean_nll, last = epochs.back().mean_nll;
  return {run.rel < 0.05 && last < first && run.seconds < 900.0 && epochs.size() == 60,
          fmt("%s: rel %.4f, NLL epoch 1 %.3f -> epoch %zu %.3f, %.0fs", to_string(path), run.rel, first,
              epochs.size(), last, run.seconds)};
}

double rms_against(const Segmentation& seg, const Vector& log_depth, const DepthField& gt) {
  return compute_metrics(render_depth(seg, log_depth), gt).rms;
}

Outcome pairwise_smoothing() {
  RunConfig cfg;
  const UnaryModel model = cfg.make_model();
  const SyntheticSet test_set = synthetic_set(model, cfg, true, 20);
  std::mt19937_64 rng(107);
  std::normal_distribution<double> noise(0.0, 0.1);
  auto noisy = [&](const Vector& y) {
    Vector z = y;
    for (Eigen::Index t = 0; t < z.size(); ++t) z[t] += noise(rng);
    return z;
  };
  // β learned by default-config FCSP training on the train split.
  if (!learned_fcsp_beta) learned_fcsp_beta = overfit_run(ModelPath::fcsp).state.beta;
  const Vector beta = learned_fcsp_beta->beta;

  int better = 0;
  for (size_t i = 0; i < test_set.samples.size(); ++i) {
    const TrainingSample& s = test_set.samples[i];
    const Vector z = noisy(s.labels);
    const Vector y = map_infer(assemble_laplacian(s.graph, PairwiseWeights(beta)), z);
    if (rms_against(s.seg, y, test_set.depth[i]) < rms_against(s.seg, z, test_set.depth[i])) ++better;
  }
  const double frac = better / static_cast<double>(test_set.samples.size());
  return {frac >= 0.9 && beta.sum() > 0.0,
          fmt("beta (%.3f, %.3f, %.3f); MAP beats beta=0 on %d/%zu held-out images", beta[0], beta[1], beta[2], better,
              test_set.samples.size())};
}

Outcome metrics_checks() {
  DepthField gt(10, 10, 1.0), pred(10, 10, 1.0);
  for (size_t i = 0; i < gt.size(); ++i) pred.depth[i] = i % 2 ? 1.2 : 1.6;
  const MetricsReport mixed = compute_metrics(pred, gt);
  const MetricsReport far = compute_metrics(DepthField(4, 4, 4.0), DepthField(4, 4, 2.0));
  const MetricsReport same = compute_metrics(gt, gt);
  double err = 0.0;
  auto track = [&](double got, double want) { err = std::max(err, std::abs(got - want)); };
  track(same.rel, 0.0);
  track(same.rms, 0.0);
  track(same.log10, 0.0);
  track(same.delta1, 1.0);
  track(far.rel, 1.0);
  track(far.rms, 2.0);
  track(far.log10, std::log10(2.0));
  track(far.delta3, 0.0);
  track(mixed.rel, 0.4);
  track(mixed.rms, std::sqrt(0.5 * (0.04 + 0.36)));
  track(mixed.delta1, 0.5);
  track(mixed.delta2, 0.5);
  track(mixed.delta3, 1.0);

  std::mt19937_64 rng(108);
  std::uniform_real_distribution<double> uni(0.1, 10.0);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    DepthField a(8, 8, 1.0), b(8, 8, 1.0);
    for (double& d : a.depth) d = uni(rng);
    for (double& d : b.depth) d = uni(rng);
    const MetricsReport m = compute_metrics(a, b);
    if (!(0.0 <= m.delta1 && m.delta1 <= m.delta2 && m.delta2 <= m.delta3 && m.delta3 <= 1.0)) ++violations;
  }
  return {err <= 1e-12 && violations == 0,
          fmt("hand examples max err %.2e, delta ordering violations %d/1000", err, violations)};
}

Outcome fcsp_speedup() {
  SyntheticOptions so;
  so.width = 128;
  so.height = 128;
  const SyntheticScene sc = generate_scene(109, so);
  RunConfig cfg;
  cfg.slic.target_count = 600;
  const PairwiseWeights beta{0.5, 0.5, 0.5};
  auto time_path = [&](ModelPath path, int& superpixels) {
    cfg.train.path = path;
    const UnaryModel model = cfg.make_model();
    const TrainingSample s = prepare_sample("speed", sc.image, sc.depth, model, cfg.sample_options(128, 128));
    superpixels = s.seg.n;
    image_loss_and_grads(model, beta, s);
    double best = 1e30;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      image_loss_and_grads(model, beta, s);
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };
  int n_dcnf = 0, n_fcsp = 0;
  const double t_dcnf = time_path(ModelPath::dcnf, n_dcnf);
  const double t_fcsp = time_path(ModelPath::fcsp, n_fcsp);
  const double speedup = t_dcnf / t_fcsp;
  return {speedup >= 3.0 && n_dcnf >= 500 && n_fcsp >= 500,
          fmt("%d superpixels; dcnf %.3fs, fcsp %.3fs, speedup %.1fx", n_fcsp, t_dcnf, t_fcsp, speedup)};
}

Outcome reproducibility() {
  RunConfig cfg;
  cfg.train.path = ModelPath::fcsp;
  cfg.train.epochs = 3;
  const UnaryModel model = cfg.make_model();
  const SyntheticSet set = synthetic_set(model, cfg, false, 5);
  TrainState a(model, 3, cfg.train.initial_beta), b(model, 3, cfg.train.initial_beta);
  train<float>(set.samples, cfg.train, a);
  train<float>(set.samples, cfg.train, b);
  const bool same_history = a.loss_history.size() == b.loss_history.size() &&
                            std::memcmp(a.loss_history.data(), b.loss_history.data(),
                                        a.loss_history.size() * sizeof(double)) == 0;

  const auto path = std::filesystem::temp_directory_path() / ("dcnf_acceptance_" + std::to_string(::getpid()) + ".bin");
  save_checkpoint(path.string(), a, {{"config", to_json(cfg)}});
  const TrainState r = load_checkpoint(path.string());
  std::filesystem::remove(path);
  const auto pa = a.model.parameters(), pr = r.model.parameters();
  const bool same_ckpt =
      pa.size() == pr.size() && std::memcmp(pa.data(), pr.data(), pa.size() * sizeof(float)) == 0 &&
      std::memcmp(a.beta.beta.data(), r.beta.beta.data(), 3 * sizeof(double)) == 0 &&
      std::memcmp(a.velocity_theta.data(), r.velocity_theta.data(), a.velocity_theta.size() * sizeof(double)) == 0 &&
      std::memcmp(a.velocity_beta.data(), r.velocity_beta.data(), 3 * sizeof(double)) == 0 &&
      r.loss_history.size() == a.loss_history.size() &&
      std::memcmp(a.loss_history.data(), r.loss_history.data(), a.loss_history.size() * sizeof(double)) == 0 &&
      r.epoch == a.epoch;
  return {same_history && same_ckpt, fmt("loss histories %s, checkpoint round-trip %s",
                                         same_history ? "bit-identical" : "DIFFER", same_ckpt ? "bit-exact" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"log-partition vs quadrature / Monte Carlo", log_partition_vs_integration},
      {"NLL gradients vs finite differences", crf_gradients},
      {"MAP inference", map_inference},
      {"superpixel pooling", pooling},
      {"network gradients (32-bit)", network_gradients},
      {"overfit 20 synthetic images", [] {
         const Outcome a = overfit(ModelPath::dcnf);
         const Outcome b = overfit(ModelPath::fcsp);
         return Outcome{a.pass && b.pass, a.detail + "; " + b.detail};
       }},
      {"pairwise term beats unary-only MAP", pairwise_smoothing},
      {"metrics", metrics_checks},
      {"fcsp speedup over dcnf", fcsp_speedup},
      {"determinism and checkpoint round-trip", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[c].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %-42s %s  %s\n", id, criteria[c].first, out.pass ? "PASS" : "FAIL", out.detail.c_str());
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
