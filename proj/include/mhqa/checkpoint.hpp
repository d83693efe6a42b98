#pragma once

// Binary checkpoints: a versioned header, JSON metadata (model config and
// vocabulary), then named tensors.
//
//   "MHQACKPT"  u32 version  u64 meta_len  meta (UTF-8 JSON)
//   u64 count, then per tensor: u32 name_len, name, u32 rank, u64 dims[rank], f64 values
// Integers and doubles are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mhqa/model.hpp"

namespace mhqa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'H', 'Q', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"embedding_dim", c.embedding_dim},
          {"hidden", c.hidden},
          {"steps", c.steps},
          {"embedding_init", c.embedding_init},
          {"train_embeddings", c.train_embeddings},
          {"dropout", c.dropout},
          {"edges", c.edges.to_string()},
          {"tau_long", c.graph.tau_long},
          {"tau_window", c.graph.tau_window},
          {"neighbor_cap", c.graph.neighbor_cap},
          {"lstm_update", to_string(c.lstm_update)},
          {"dag_update", to_string(c.dag_update)},
          {"graph_update", to_string(c.graph_update)},
          {"self_loop", c.self_loop},
          {"shared_graph_params", c.shared_graph_params},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.embedding_init = j.at("embedding_init").get<double>();
  c.train_embeddings = j.at("train_embeddings").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.edges = EdgeFilter::parse(j.at("edges").get<std::string>());
  c.graph.tau_long = j.at("tau_long").get<std::size_t>();
  c.graph.tau_window = j.at("tau_window").get<std::size_t>();
  c.graph.neighbor_cap = j.at("neighbor_cap").get<std::size_t>();
  c.lstm_update = parse_candidate_activation(j.at("lstm_update").get<std::string>());
  c.dag_update = parse_candidate_activation(j.at("dag_update").get<std::string>());
  c.graph_update = parse_candidate_activation(j.at("graph_update").get<std::string>());
  c.self_loop = j.at("self_loop").get<bool>();
  c.shared_graph_params = j.at("shared_graph_params").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return v;
}

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) write_pod<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace detail

struct TensorRecord {
  std::string name;
  Tensor value;
};

struct CheckpointContents {
  nlohmann::json metadata;
  std::vector<TensorRecord> tensors;
};

inline void write_checkpoint(std::ostream& out, const nlohmann::json& metadata, const std::vector<TensorRecord>& tensors) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = metadata.dump();
  detail::write_pod<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::write_pod<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) detail::write_tensor(out, t.name, t.value);
  if (!out) throw CheckpointError("failed writing checkpoint");
}

inline CheckpointContents read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointContents c;
  const auto meta_len = detail::read_pod<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw CheckpointError("truncated checkpoint metadata");
  try {
    c.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
  }
  const auto count = detail::read_pod<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    TensorRecord r;
    r.name.resize(detail::read_pod<std::uint32_t>(in));
    if (!in.read(r.name.data(), static_cast<std::streamsize>(r.name.size()))) throw CheckpointError("truncated tensor name");
    const auto rank = detail::read_pod<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(detail::read_pod<std::uint64_t>(in));
    r.value = Tensor(shape);
    if (!in.read(reinterpret_cast<char*>(r.value.values.data()),
                 static_cast<std::streamsize>(r.value.size() * sizeof(double)))) {
      throw CheckpointError("truncated tensor '" + r.name + "'");
    }
    c.tensors.push_back(std::move(r));
  }
  return c;
}

inline void save_model(const std::string& path, const Model& model, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json meta = std::move(extra);
  meta["config"] = to_json(model.config());
  meta["vocabulary"] = model.embeddings().words();
  std::vector<TensorRecord> tensors;
  tensors.push_back({model.embeddings().matrix().name, model.embeddings().matrix().value});
  for (const Parameter& p : model.parameters().all()) tensors.push_back({p.name, p.value});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  write_checkpoint(out, meta, tensors);
}

/// Rebuilds the model from its stored config and overwrites every tensor.
inline std::unique_ptr<Model> load_model(const std::string& path, nlohmann::json* metadata = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  CheckpointContents c = read_checkpoint(in);
  ModelConfig config;
  std::vector<std::string> words;
  try {
    config = model_config_from_json(c.metadata.at("config"));
    words = c.metadata.at("vocabulary").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
  Tensor embedding;
  for (const auto& r : c.tensors) {
    if (r.name == "embedding") embedding = r.value;
  }
  if (embedding.size() == 0) throw CheckpointError("checkpoint has no embedding tensor");
  auto model = std::make_unique<Model>(config, EmbeddingTable(std::move(words), std::move(embedding)));
  std::size_t restored = 0;
  for (const auto& r : c.tensors) {
    if (r.name == "embedding") continue;
    Parameter* p = model->parameters().find(r.name);
    if (!p) throw CheckpointError("checkpoint tensor '" + r.name + "' does not belong to a " + std::string(to_string(config.kind)) + " model");
    if (p->value.shape != r.value.shape) {
      throw CheckpointError("tensor '" + r.name + "' has shape " + shape_string(r.value.shape) + ", model expects " +
                            shape_string(p->value.shape));
    }
    p->value = r.value;
    ++restored;
  }
  if (restored != model->parameters().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(restored) + " of " +
                          std::to_string(model->parameters().size()) + " parameters");
  }
  if (metadata) *metadata = std::move(c.metadata);
  return model;
}

}  // namespace mhqa
