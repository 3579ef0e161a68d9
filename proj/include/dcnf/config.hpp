#pragma once

// Run configuration and dataset manifests, both stored as JSON. Missing keys
// take their defaults, unknown keys are rejected.

#include "dcnf/crf.hpp"
#include "dcnf/errors.hpp"
#include "dcnf/similarity.hpp"
#include "dcnf/slic.hpp"
#include "dcnf/trainer.hpp"
#include "dcnf/unary.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace dcnf {

struct BackboneConfig {
  int patch_side = 32;        // dcnf patch resolution
  int feature_channels = 32;  // fcsp d
  uint64_t seed = 1;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct RunConfig {
  SimilarityConfig similarity;
  SlicOptions slic;
  TrainConfig train;
  BackboneConfig backbone;
  SolverOptions solver;
  std::string preset = "indoor";  // patch box preset: indoor | outdoor
  int box_side = 0;               // 0: derive from the preset and image size
  std::string output_dir = "out";

  void validate() const {
    similarity.validate();
    train.validate();
    if (slic.target_count < 1) throw ParameterError("slic.target_count must be >= 1");
    if (!(slic.compactness > 0.0)) throw ParameterError("slic.compactness must be > 0");
    if (slic.iterations < 1) throw ParameterError("slic.iterations must be >= 1");
    if (backbone.patch_side < 4) throw ParameterError("backbone.patch_side must be >= 4");
    if (backbone.feature_channels < 1) throw ParameterError("backbone.feature_channels must be >= 1");
    if (preset != "indoor" && preset != "outdoor") throw ParameterError("preset must be indoor or outdoor");
    if (box_side != 0 && box_side < 8) throw ParameterError("box_side must be >= 8 (or 0 for the preset)");
    if (!(solver.cg_tolerance > 0.0) || solver.cholesky_max_nodes < 1 || solver.cg_max_iterations < 0)
      throw ParameterError("invalid solver options");
  }

  UnaryModel make_model() const {
    return train.path == ModelPath::dcnf ? default_dcnf_model(backbone.patch_side, backbone.seed)
                                         : default_fcsp_model(backbone.feature_channels, backbone.seed);
  }

  SampleOptions sample_options(int width, int height) const {
    SampleOptions o;
    o.slic = slic;
    o.similarity = similarity;
    o.box_side = box_side > 0 ? box_side : preset_box_side(preset, width, height);
    o.patch_side = backbone.patch_side;
    return o;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw DataError(where + " must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw DataError("unknown key '" + k + "' in " + where);
}

inline const char* to_string(SolverBackend b) {
  switch (b) {
    case SolverBackend::automatic: return "auto";
    case SolverBackend::cholesky: return "cholesky";
    case SolverBackend::conjugate_gradient: return "cg";
  }
  return "auto";
}

inline SolverBackend solver_backend_from_string(const std::string& s) {
  if (s == "auto") return SolverBackend::automatic;
  if (s == "cholesky") return SolverBackend::cholesky;
  if (s == "cg") return SolverBackend::conjugate_gradient;
  throw DataError("unknown solver backend '" + s + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& t = c.train;
  return json{
      {"similarity",
       {{"gamma", c.similarity.gamma},
        {"histogram_bins", c.similarity.histogram_bins},
        {"lbp_neighbors", c.similarity.lbp.neighbors},
        {"lbp_radius", c.similarity.lbp.radius},
        {"color_space", "rgb"}}},
      {"slic", {{"target_count", c.slic.target_count}, {"compactness", c.slic.compactness}, {"iterations", c.slic.iterations}}},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"lr_decay", t.lr_decay},
        {"lr_decay_every", t.lr_decay_every},
        {"momentum", t.momentum},
        {"lambda1", t.lambda1},
        {"lambda2", t.lambda2},
        {"epochs", t.epochs},
        {"seed", t.seed},
        {"path", to_string(t.path)},
        {"batch_size", t.batch_size},
        {"initial_beta", t.initial_beta},
        {"frozen_layers", t.frozen_layers},
        {"pretrain_epochs", t.pretrain_epochs},
        {"checkpoint_every", t.checkpoint_every}}},
      {"backbone", {{"patch_side", c.backbone.patch_side}, {"feature_channels", c.backbone.feature_channels}, {"seed", c.backbone.seed}}},
      {"solver",
       {{"backend", detail::to_string(c.solver.backend)},
        {"cholesky_max_nodes", c.solver.cholesky_max_nodes},
        {"cg_tolerance", c.solver.cg_tolerance},
        {"cg_max_iterations", c.solver.cg_max_iterations}}},
      {"preset", c.preset},
      {"box_side", c.box_side},
      {"output_dir", c.output_dir}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    detail::reject_unknown(j, {"similarity", "slic", "train", "backbone", "solver", "preset", "box_side", "output_dir"}, "config");
    if (j.contains("similarity")) {
      const auto& s = j["similarity"];
      detail::reject_unknown(s, {"gamma", "histogram_bins", "lbp_neighbors", "lbp_radius", "color_space"}, "similarity");
      c.similarity.gamma = s.value("gamma", c.similarity.gamma);
      c.similarity.histogram_bins = s.value("histogram_bins", c.similarity.histogram_bins);
      c.similarity.lbp.neighbors = s.value("lbp_neighbors", c.similarity.lbp.neighbors);
      c.similarity.lbp.radius = s.value("lbp_radius", c.similarity.lbp.radius);
      if (s.value("color_space", std::string("rgb")) != "rgb") throw DataError("similarity.color_space supports only rgb");
    }
    if (j.contains("slic")) {
      const auto& s = j["slic"];
      detail::reject_unknown(s, {"target_count", "compactness", "iterations"}, "slic");
      c.slic.target_count = s.value("target_count", c.slic.target_count);
      c.slic.compactness = s.value("compactness", c.slic.compactness);
      c.slic.iterations = s.value("iterations", c.slic.iterations);
    }
    if (j.contains("train")) {
      const auto& s = j["train"];
      detail::reject_unknown(s,
                             {"learning_rate", "lr_decay", "lr_decay_every", "momentum", "lambda1", "lambda2", "epochs",
                              "seed", "path", "batch_size", "initial_beta", "frozen_layers", "pretrain_epochs",
                              "checkpoint_every"},
                             "train");
      auto& t = c.train;
      t.learning_rate = s.value("learning_rate", t.learning_rate);
      t.lr_decay = s.value("lr_decay", t.lr_decay);
      t.lr_decay_every = s.value("lr_decay_every", t.lr_decay_every);
      t.momentum = s.value("momentum", t.momentum);
      t.lambda1 = s.value("lambda1", t.lambda1);
      t.lambda2 = s.value("lambda2", t.lambda2);
      t.epochs = s.value("epochs", t.epochs);
      t.seed = s.value("seed", t.seed);
      t.path = model_path_from_string(s.value("path", std::string(to_string(t.path))));
      t.batch_size = s.value("batch_size", t.batch_size);
      t.initial_beta = s.value("initial_beta", t.initial_beta);
      t.frozen_layers = s.value("frozen_layers", t.frozen_layers);
      t.pretrain_epochs = s.value("pretrain_epochs", t.pretrain_epochs);
      t.checkpoint_every = s.value("checkpoint_every", t.checkpoint_every);
    }
    if (j.contains("backbone")) {
      const auto& s = j["backbone"];
      detail::reject_unknown(s, {"patch_side", "feature_channels", "seed"}, "backbone");
      c.backbone.patch_side = s.value("patch_side", c.backbone.patch_side);
      c.backbone.feature_channels = s.value("feature_channels", c.backbone.feature_channels);
      c.backbone.seed = s.value("seed", c.backbone.seed);
    }
    if (j.contains("solver")) {
      const auto& s = j["solver"];
      detail::reject_unknown(s, {"backend", "cholesky_max_nodes", "cg_tolerance", "cg_max_iterations"}, "solver");
      c.solver.backend = detail::solver_backend_from_string(s.value("backend", std::string("auto")));
      c.solver.cholesky_max_nodes = s.value("cholesky_max_nodes", c.solver.cholesky_max_nodes);
      c.solver.cg_tolerance = s.value("cg_tolerance", c.solver.cg_tolerance);
      c.solver.cg_max_iterations = s.value("cg_max_iterations", c.solver.cg_max_iterations);
    }
    c.preset = j.value("preset", c.preset);
    c.box_side = j.value("box_side", c.box_side);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

struct ManifestRecord {
  std::string image;
  std::string depth;  // may be empty for unlabeled images
  std::string split = "train";

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  double unit_scale = 0.001;  // meters per 16-bit PNG unit
  double max_depth = 10.0;
  std::string preset = "indoor";

  std::vector<ManifestRecord> split(const std::string& tag) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.split == tag) out.push_back(r);
    return out;
  }

  void validate() const {
    if (!(unit_scale > 0.0)) throw DataError("manifest unit_scale must be > 0");
    if (!(max_depth > 0.0)) throw DataError("manifest max_depth must be > 0");
    if (preset != "indoor" && preset != "outdoor") throw DataError("manifest preset must be indoor or outdoor");
    for (const auto& r : records)
      if (r.split != "train" && r.split != "val" && r.split != "test")
        throw DataError("split tag '" + r.split + "' is not train, val or test");
  }

  /// Every referenced file must exist.
  void check_paths() const {
    for (const auto& r : records) {
      if (!std::filesystem::exists(r.image)) throw DataError("missing image " + r.image);
      if (!r.depth.empty() && !std::filesystem::exists(r.depth)) throw DataError("missing depth " + r.depth);
    }
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) records.push_back({{"image", r.image}, {"depth", r.depth}, {"split", r.split}});
  return {{"unit_scale", m.unit_scale}, {"max_depth", m.max_depth}, {"preset", m.preset}, {"records", records}};
}

/// Relative paths resolve against `base_dir`.
inline DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& base_dir = "") {
  DatasetManifest m;
  try {
    detail::reject_unknown(j, {"unit_scale", "max_depth", "preset", "records"}, "manifest");
    m.unit_scale = j.value("unit_scale", m.unit_scale);
    m.max_depth = j.value("max_depth", m.max_depth);
    m.preset = j.value("preset", m.preset);
    auto resolve = [&](const std::string& p) {
      if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
      return (std::filesystem::path(base_dir) / p).lexically_normal().string();
    };
    for (const auto& r : j.at("records")) {
      detail::reject_unknown(r, {"image", "depth", "split"}, "manifest record");
      m.records.push_back({resolve(r.at("image").get<std::string>()), resolve(r.value("depth", std::string())),
                           r.value("split", std::string("train"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path().string();
  DatasetManifest m = manifest_from_json(read_json_file(path), dir);
  m.check_paths();
  return m;
}

}  // namespace dcnf
