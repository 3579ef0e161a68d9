#pragma once

// End-to-end steps shared by the command-line tool and the tests: dataset
// loading, per-image prediction and synthetic dataset generation.

#include "dcnf/checkpoint.hpp"
#include "dcnf/config.hpp"
#include "dcnf/io.hpp"
#include "dcnf/metrics.hpp"
#include "dcnf/parallel.hpp"
#include "dcnf/synth.hpp"
#include "dcnf/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace dcnf {

struct LoadedDataset {
  std::vector<TrainingSample> samples;
  std::vector<DepthField> ground_truth;  // aligned with samples
  std::vector<std::string> skipped;      // "<path>: <reason>"
};

/// Loads and preprocesses records in parallel. Records that fail are skipped
/// and reported; order of the survivors follows the manifest.
inline LoadedDataset load_dataset(const std::vector<ManifestRecord>& records, const DatasetManifest& manifest,
                                  const RunConfig& cfg, const UnaryModel& model) {
  std::vector<std::optional<TrainingSample>> samples(records.size());
  std::vector<DepthField> gts(records.size());
  std::vector<std::string> errors(records.size());
  RunConfig local = cfg;
  local.preset = manifest.preset;
  parallel_for(records.size(), [&](size_t i) {
    const ManifestRecord& r = records[i];
    try {
      const ImageRgb image = load_image(r.image);
      if (!r.depth.empty()) gts[i] = load_depth(r.depth, manifest.unit_scale, manifest.max_depth);
      if (gts[i].size() > 0 && (gts[i].width != image.width() || gts[i].height != image.height()))
        throw DataError("depth and image sizes differ");
      samples[i] = prepare_sample(std::filesystem::path(r.image).stem().string(), image, gts[i], model,
                                  local.sample_options(image.width(), image.height()));
    } catch (const std::exception& e) {
      errors[i] = r.image + ": " + e.what();
    }
  });
  LoadedDataset out;
  for (size_t i = 0; i < records.size(); ++i) {
    if (samples[i]) {
      out.samples.push_back(std::move(*samples[i]));
      out.ground_truth.push_back(std::move(gts[i]));
    } else {
      out.skipped.push_back(errors[i]);
    }
  }
  return out;
}

struct Prediction {
  Segmentation seg;
  Vector z;          // unary log-depths
  Vector log_depth;  // MAP
  DepthField depth;
  double seconds = 0.0;
};

/// segment -> graph -> unary -> A -> MAP -> render.
inline Prediction predict_sample(const TrainState& state, const TrainingSample& sample, const SolverOptions& solver = {}) {
  const auto start = std::chrono::steady_clock::now();
  Prediction p;
  UnaryCache cache;
  p.seg = sample.seg;
  p.z = unary_forward(state.model, sample, cache);
  p.log_depth = map_infer(assemble_laplacian(sample.graph, state.beta, solver), p.z);
  p.depth = render_depth(sample.seg, p.log_depth);
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return p;
}

inline Prediction predict_image(const TrainState& state, const ImageRgb& image, const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const TrainingSample sample =
      prepare_sample("image", image, DepthField{}, state.model, cfg.sample_options(image.width(), image.height()));
  Prediction p = predict_sample(state, sample, cfg.solver);
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return p;
}

struct SyntheticDatasetOptions {
  int train_count = 20;
  int test_count = 0;
  uint64_t seed = 1;
  SyntheticOptions scene;
};

/// Writes <dir>/<split>_NNN.png, <split>_NNN_depth.png (16-bit, millimeters)
/// and <dir>/manifest.json. Returns the manifest path.
inline std::string write_synthetic_dataset(const std::string& dir, const SyntheticDatasetOptions& opt) {
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  manifest.unit_scale = 0.001;
  manifest.max_depth = 10.0;
  manifest.preset = "indoor";
  auto emit = [&](const std::string& split, int count) {
    for (int i = 0; i < count; ++i) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%03d", split.c_str(), i);
      const SyntheticScene scene = synthetic_dataset_scene(opt.seed, split == "test", i, opt.scene);
      save_image((std::filesystem::path(dir) / (std::string(stem) + ".png")).string(), scene.image);
      save_depth_png((std::filesystem::path(dir) / (std::string(stem) + "_depth.png")).string(), scene.depth,
                     manifest.unit_scale);
      manifest.records.push_back({std::string(stem) + ".png", std::string(stem) + "_depth.png", split});
    }
  };
  emit("train", opt.train_count);
  emit("test", opt.test_count);
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  write_json_file(path, to_json(manifest));
  return path;
}

}  // namespace dcnf
