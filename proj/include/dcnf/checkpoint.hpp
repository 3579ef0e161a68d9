#pragma once

// Binary training checkpoints.
//
//   "DCNFCKPT" | u32 version | u64 header bytes | JSON header
//   f32 θ[num_params] | f64 β[K] | f64 velocity θ | f64 velocity β | f64 loss history
//
// All numbers little-endian. The JSON header carries the architecture, so a
// checkpoint is self-describing.

#include "dcnf/errors.hpp"
#include "dcnf/trainer.hpp"
#include "dcnf/unary.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace dcnf {

inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'N', 'F', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"kind", to_string(l.kind)}};
  if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) j["outputs"] = l.outputs;
  if (l.kind == LayerKind::conv || l.kind == LayerKind::max_pool) {
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
  }
  if (l.kind == LayerKind::conv) j["padding"] = l.padding;
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.outputs = j.value("outputs", 0);
  l.kernel = j.value("kernel", 0);
  l.stride = j.value("stride", 1);
  l.padding = j.value("padding", 0);
  return l;
}

template <class Real>
nlohmann::json network_to_json(const Network<Real>& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) layers.push_back(layer_to_json(l));
  const Shape& in = net.input_shape();
  return {{"input", {in.c, in.h, in.w}}, {"layers", layers}};
}

inline Network<float> network_from_json(const nlohmann::json& j) {
  const auto in = j.at("input").get<std::vector<int>>();
  if (in.size() != 3) throw DataError("network input shape must have 3 entries");
  std::vector<LayerSpec> layers;
  for (const auto& l : j.at("layers")) layers.push_back(layer_from_json(l));
  return Network<float>({in[0], in[1], in[2]}, layers);
}

inline nlohmann::json model_to_json(const UnaryModel& model) {
  nlohmann::json j{{"path", to_string(model.path)}, {"backbone", network_to_json(model.backbone)}};
  if (model.path == ModelPath::fcsp) j["head"] = network_to_json(model.head);
  return j;
}

/// Architecture only; parameters are zero.
inline UnaryModel model_from_json(const nlohmann::json& j) {
  UnaryModel m;
  m.path = model_path_from_string(j.at("path").get<std::string>());
  m.backbone = network_from_json(j.at("backbone"));
  if (m.path == ModelPath::fcsp) m.head = network_from_json(j.at("head"));
  m.validate();
  return m;
}

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint truncated");
  return value;
}

template <class T>
void write_array(std::ostream& out, const T* data, size_t count) {
  for (size_t i = 0; i < count; ++i) write_le(out, data[i]);
}

template <class T>
void read_array(std::istream& in, T* data, size_t count) {
  for (size_t i = 0; i < count; ++i) data[i] = read_le<T>(in);
}

}  // namespace detail

/// `meta` is stored verbatim in the header (the CLI keeps the run config there).
inline void save_checkpoint(const std::string& path, const TrainState& state, const nlohmann::json& meta = {}) {
  nlohmann::json header{{"model", model_to_json(state.model)},
                        {"num_params", state.model.num_params()},
                        {"beta_channels", state.beta.size()},
                        {"epoch", state.epoch},
                        {"history_length", state.loss_history.size()}};
  if (!meta.is_null()) header["meta"] = meta;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_le<uint32_t>(out, kCheckpointVersion);
  detail::write_le<uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));

  const std::vector<float> theta = state.model.parameters();
  detail::write_array(out, theta.data(), theta.size());
  detail::write_array(out, state.beta.beta.data(), static_cast<size_t>(state.beta.size()));
  std::vector<double> vt = state.velocity_theta;
  vt.resize(theta.size(), 0.0);
  detail::write_array(out, vt.data(), vt.size());
  Vector vb = state.velocity_beta.size() == state.beta.size() ? state.velocity_beta : Vector::Zero(state.beta.size());
  detail::write_array(out, vb.data(), static_cast<size_t>(vb.size()));
  detail::write_array(out, state.loss_history.data(), state.loss_history.size());
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline TrainState load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError(path + " is not a checkpoint");
  const auto version = detail::read_le<uint32_t>(in);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_size = detail::read_le<uint64_t>(in);
  if (header_size > (1u << 24)) throw DataError("checkpoint header too large");
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw DataError("checkpoint truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  if (meta) *meta = header.value("meta", nlohmann::json());
  TrainState state;
  state.model = model_from_json(header.at("model"));
  const size_t num_params = header.at("num_params").get<size_t>();
  if (num_params != state.model.num_params()) throw DataError("checkpoint parameter count disagrees with architecture");
  const auto channels = header.at("beta_channels").get<Eigen::Index>();
  const auto history = header.at("history_length").get<size_t>();
  state.epoch = header.at("epoch").get<int>();

  std::vector<float> theta(num_params);
  detail::read_array(in, theta.data(), theta.size());
  state.model.set_parameters(theta);
  state.beta.beta = Vector(channels);
  detail::read_array(in, state.beta.beta.data(), static_cast<size_t>(channels));
  state.velocity_theta.resize(num_params);
  detail::read_array(in, state.velocity_theta.data(), num_params);
  state.velocity_beta = Vector(channels);
  detail::read_array(in, state.velocity_beta.data(), static_cast<size_t>(channels));
  state.loss_history.resize(history);
  detail::read_array(in, state.loss_history.data(), history);
  return state;
}

}  // namespace dcnf
