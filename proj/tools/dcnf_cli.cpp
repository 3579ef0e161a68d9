// Command-line front end: segment, train, predict, eval, selfcheck, gen-synth.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 selfcheck failure.

#include "dcnf/checkpoint.hpp"
#include "dcnf/config.hpp"
#include "dcnf/io.hpp"
#include "dcnf/metrics.hpp"
#include "dcnf/parallel.hpp"
#include "dcnf/pipeline.hpp"
#include "dcnf/selfcheck.hpp"
#include "dcnf/similarity.hpp"
#include "dcnf/slic.hpp"
#include "dcnf/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dcnf;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitSelfcheck = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::string manifest;
  std::string checkpoint;
  std::string out;
  std::optional<uint64_t> seed;
  std::optional<std::string> path;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.path) cfg.train.path = model_path_from_string(*o.path);
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return (fs::path(cfg.output_dir) / name).string();
}

/// Checkpoint plus the run config it was trained with; command-line choices
/// override the stored config.
TrainState load_trained(const CommonOptions& o, RunConfig& cfg) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  nlohmann::json meta;
  TrainState state = load_checkpoint(o.checkpoint, &meta);
  if (o.config.empty() && meta.contains("config")) {
    cfg = run_config_from_json(meta["config"]);
    if (o.seed) cfg.train.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
  }
  if (o.path && model_path_from_string(*o.path) != state.model.path)
    throw DataError(std::string("checkpoint holds a ") + to_string(state.model.path) + " model but --path is " + *o.path);
  if (!o.config.empty() && model_to_json(cfg.make_model()) != model_to_json(state.model))
    throw DataError("checkpoint architecture does not match the configured backbone");
  cfg.train.path = state.model.path;
  return state;
}

int cmd_segment(const CommonOptions& o, const std::vector<std::string>& images) {
  const RunConfig cfg = resolve_config(o);
  for (const auto& path : images) {
    const ImageRgb image = load_image(path);
    image.validate();
    const Segmentation seg = slic_segment(image, cfg.slic);
    const CrfGraph graph = build_graph(image, seg, cfg.similarity);
    const std::string stem = fs::path(path).stem().string();
    save_label_png(out_path(cfg, stem + "_labels.png"), seg.width, seg.height, seg.label_map);
    nlohmann::json centroids = nlohmann::json::array();
    for (const auto& c : seg.centroids) centroids.push_back({c.x, c.y});
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : graph.edges) edges.push_back({e.p, e.q});
    write_json_file(out_path(cfg, stem + "_segments.json"),
                    {{"image", path}, {"n", seg.n}, {"centroids", centroids}, {"edges", edges}});
    std::cout << path << ": " << seg.n << " superpixels, " << graph.edges.size() << " edges\n";
  }
  return 0;
}

int cmd_train(const CommonOptions& o) {
  if (o.manifest.empty()) throw UsageError("--manifest is required");
  RunConfig cfg = resolve_config(o);
  const DatasetManifest manifest = load_manifest(o.manifest);
  const auto records = manifest.split("train");
  if (records.empty()) throw DataError("manifest has no train records");

  const UnaryModel model = cfg.make_model();
  LoadedDataset data = load_dataset(records, manifest, cfg, model);
  for (const auto& s : data.skipped) std::cerr << "warning: skipped " << s << '\n';
  if (data.samples.empty()) throw DataError("no train image could be preprocessed");
  std::cout << "training " << to_string(cfg.train.path) << " on " << data.samples.size() << " images ("
            << data.skipped.size() << " skipped)\n";

  TrainState state(model, 3, cfg.train.initial_beta);
  const std::string checkpoint = o.checkpoint.empty() ? out_path(cfg, "checkpoint.bin") : o.checkpoint;
  if (fs::path(checkpoint).has_parent_path()) fs::create_directories(fs::path(checkpoint).parent_path());
  const nlohmann::json meta{{"config", to_json(cfg)}};
  nlohmann::json log_epochs = nlohmann::json::array();
  const auto result = train<float>(data.samples, cfg.train, state, [&](const TrainState& s, const EpochLog& log) {
    log_epochs.push_back({{"epoch", log.epoch},
                          {"phase", log.phase},
                          {"lr", log.learning_rate},
                          {"mean_nll", log.mean_nll},
                          {"seconds", log.seconds},
                          {"aborted_steps", log.aborted_steps}});
    std::printf("epoch %3d  phase %d  lr %.3g  mean NLL %.6f  %.2fs\n", log.epoch, log.phase, log.learning_rate,
                log.mean_nll, log.seconds);
    std::fflush(stdout);
    if (cfg.train.checkpoint_every > 0 && log.epoch % cfg.train.checkpoint_every == 0)
      save_checkpoint(out_path(cfg, "checkpoint_epoch" + std::to_string(log.epoch) + ".bin"), s, meta);
  });
  save_checkpoint(checkpoint, state, meta);

  nlohmann::json skipped = data.skipped;
  write_json_file(out_path(cfg, "train_log.json"),
                  {{"path", to_string(cfg.train.path)},
                   {"update_order", "beta: momentum step with lambda2 decay, then projection onto beta >= 0"},
                   {"images", data.samples.size()},
                   {"skipped", skipped},
                   {"aborted_steps", result.aborted_steps},
                   {"final_beta", std::vector<double>(state.beta.beta.data(), state.beta.beta.data() + state.beta.size())},
                   {"epochs", log_epochs}});
  std::cout << "checkpoint: " << checkpoint << '\n';
  return 0;
}

int cmd_predict(const CommonOptions& o, const std::vector<std::string>& images, const std::string& format, bool color) {
  if (images.empty()) throw UsageError("predict needs at least one image");
  if (format != "png" && format != "pfm") throw UsageError("--format must be png or pfm");
  RunConfig cfg = resolve_config(o);
  const TrainState state = load_trained(o, cfg);
  const double unit_scale = 0.001;
  std::vector<std::string> lines(images.size());
  parallel_for(images.size(), [&](size_t i) {
    const ImageRgb image = load_image(images[i]);
    const Prediction p = predict_image(state, image, cfg);
    const std::string stem = fs::path(images[i]).stem().string();
    const std::string depth_path = out_path(cfg, stem + "_depth." + format);
    if (format == "png") {
      save_depth_png(depth_path, p.depth, unit_scale);
      write_json_file(out_path(cfg, stem + "_depth.json"), {{"unit_scale", unit_scale}, {"units", "meters"}});
    } else {
      save_depth_pfm(depth_path, p.depth);
    }
    if (color) save_image(out_path(cfg, stem + "_depth_color.png"), colorize_depth(p.depth));
    char line[512];
    std::snprintf(line, sizeof line, "%s -> %s  (%d superpixels, %.3fs)", images[i].c_str(), depth_path.c_str(), p.seg.n,
                  p.seconds);
    lines[i] = line;
  });
  for (const auto& l : lines) std::cout << l << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& split, double cutoff, bool error_maps) {
  if (o.manifest.empty()) throw UsageError("--manifest is required");
  RunConfig cfg = resolve_config(o);
  const TrainState state = load_trained(o, cfg);
  const DatasetManifest manifest = load_manifest(o.manifest);
  std::vector<ManifestRecord> records;
  for (const auto& r : manifest.split(split))
    if (!r.depth.empty()) records.push_back(r);
  if (records.empty()) throw DataError("no '" + split + "' records with ground truth");
  LoadedDataset data = load_dataset(records, manifest, cfg, state.model);
  for (const auto& s : data.skipped) std::cerr << "warning: skipped " << s << '\n';
  if (data.samples.empty()) throw DataError("no evaluation image could be preprocessed");

  std::vector<MetricsAccumulator> all(data.samples.size()), c1(data.samples.size());
  std::vector<nlohmann::json> per_image(data.samples.size());
  parallel_for(data.samples.size(), [&](size_t i) {
    const Prediction p = predict_sample(state, data.samples[i], cfg.solver);
    const DepthField& gt = data.ground_truth[i];
    all[i].add(p.depth, gt);
    if (cutoff > 0.0) c1[i].add(p.depth, gt, [&](double g) { return g < cutoff; });
    nlohmann::json row = all[i].report();
    row["image"] = data.samples[i].id;
    row["seconds"] = p.seconds;
    if (error_maps) {
      const auto errors = absolute_error_map(p.depth, gt);
      save_image(out_path(cfg, data.samples[i].id + "_error.png"), colorize_errors(errors, gt.width, gt.height));
      nlohmann::json hist = error_histogram(errors);
      write_json_file(out_path(cfg, data.samples[i].id + "_error_hist.json"), hist);
    }
    per_image[i] = row;
  });
  MetricsAccumulator total, total_c1;
  for (size_t i = 0; i < all.size(); ++i) {
    total.merge(all[i]);
    total_c1.merge(c1[i]);
  }
  nlohmann::json out{{"split", split}, {"images", data.samples.size()}, {"metrics", total.report()}, {"per_image", per_image}};
  std::vector<std::pair<std::string, MetricsReport>> rows;
  if (cutoff > 0.0) {
    if (total_c1.count() == 0) throw DataError("no ground truth below the cutoff");
    out["c1_cutoff"] = cutoff;
    out["metrics_c1"] = total_c1.report();
    rows.emplace_back("C1", total_c1.report());
    rows.emplace_back("C2", total.report());
  } else {
    rows.emplace_back(to_string(state.model.path), total.report());
  }
  write_json_file(out_path(cfg, "metrics.json"), out);
  std::cout << format_metrics_table(rows);
  return 0;
}

int cmd_selfcheck(const CommonOptions& o) {
  const uint64_t seed = o.seed.value_or(1);
  const SelfcheckReport report = run_selfcheck(seed);
  std::cout << report.table();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_json_file((fs::path(o.out) / "selfcheck.json").string(), report.to_json());
  }
  std::cout << (report.passed() ? "all checks passed\n" : "SELFCHECK FAILED\n");
  return report.passed() ? 0 : kExitSelfcheck;
}

int cmd_gen_synth(const CommonOptions& o, int train_count, int test_count) {
  if (o.out.empty()) throw UsageError("--out is required");
  SyntheticDatasetOptions opt;
  opt.train_count = train_count;
  opt.test_count = test_count;
  opt.seed = o.seed.value_or(1);
  const std::string manifest = write_synthetic_dataset(o.out, opt);
  std::cout << "wrote " << train_count << " train and " << test_count << " test scenes; manifest " << manifest << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-CRF monocular depth estimation (DCNF / FCSP)"};
  app.require_subcommand(1);
  CommonOptions o;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "run configuration JSON");
    cmd->add_option("--manifest", o.manifest, "dataset manifest JSON");
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--path", o.path, "unary path")->check(CLI::IsMember({"dcnf", "fcsp"}));
  };

  std::vector<std::string> images;
  std::string format = "png";
  bool color = false;
  std::string split = "test";
  double cutoff = 0.0;
  bool error_maps = false;
  int train_count = 20;
  int test_count = 5;

  auto* segment = app.add_subcommand("segment", "superpixels and CRF graph of images");
  add_common(segment);
  segment->add_option("images", images, "input PNG images")->required();
  auto* train_cmd = app.add_subcommand("train", "train a model on the manifest's train split");
  add_common(train_cmd);
  auto* predict = app.add_subcommand("predict", "predict depth maps");
  add_common(predict);
  predict->add_option("images", images, "input PNG images")->required();
  predict->add_option("--format", format, "depth output format: png (16-bit, mm) or pfm");
  predict->add_flag("--color", color, "also write a colour-mapped depth image");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
  add_common(eval);
  eval->add_option("--split", split, "manifest split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--cutoff", cutoff, "also report metrics over ground truth below this depth (meters)");
  eval->add_flag("--error-maps", error_maps, "write per-image error maps and histograms");
  auto* selfcheck = app.add_subcommand("selfcheck", "run the oracle suite");
  add_common(selfcheck);
  auto* gen = app.add_subcommand("gen-synth", "write the built-in synthetic dataset");
  add_common(gen);
  gen->add_option("--train-count", train_count, "training scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--test-count", test_count, "test scenes")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*segment) return cmd_segment(o, images);
    if (*train_cmd) return cmd_train(o);
    if (*predict) return cmd_predict(o, images, format, color);
    if (*eval) return cmd_eval(o, split, cutoff, error_maps);
    if (*selfcheck) return cmd_selfcheck(o);
    if (*gen) return cmd_gen_synth(o, train_count, test_count);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
