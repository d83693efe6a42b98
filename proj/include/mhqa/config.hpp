#pragma once

// key=value run configuration shared by the trainer and the command line.

#include <charconv>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhqa/model.hpp"
#include "mhqa/training.hpp"

namespace mhqa {

struct RunSettings {
  ModelConfig model;
  TrainConfig train;

  /// Single seed for initialization, dropout and data order.
  void set_seed(std::uint64_t seed) {
    model.seed = seed;
    train.seed = seed;
  }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean '" + value + "' for " + key);
}

}  // namespace detail

/// Reads "key = value" lines; '#' starts a comment. Later keys win.
inline std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), detail::trim(line.substr(eq + 1)));
  }
  return out;
}

inline void apply_setting(RunSettings& s, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  auto& m = s.model;
  auto& t = s.train;
  try {
    if (key == "model") m.kind = parse_model_kind(value);
    else if (key == "embedding_dim") m.embedding_dim = parse_number<std::size_t>(key, value);
    else if (key == "hidden") m.hidden = parse_number<std::size_t>(key, value);
    else if (key == "steps") m.steps = parse_number<std::size_t>(key, value);
    else if (key == "embedding_init") m.embedding_init = parse_number<double>(key, value);
    else if (key == "train_embeddings") m.train_embeddings = parse_bool(key, value);
    else if (key == "dropout") m.dropout = parse_number<double>(key, value);
    else if (key == "edges") m.edges = EdgeFilter::parse(value);
    else if (key == "tau_long") m.graph.tau_long = parse_number<std::size_t>(key, value);
    else if (key == "tau_window") m.graph.tau_window = parse_number<std::size_t>(key, value);
    else if (key == "neighbor_cap") m.graph.neighbor_cap = parse_number<std::size_t>(key, value);
    else if (key == "lstm_update") m.lstm_update = parse_candidate_activation(value);
    else if (key == "dag_update") m.dag_update = parse_candidate_activation(value);
    else if (key == "graph_update") m.graph_update = parse_candidate_activation(value);
    else if (key == "self_loop") m.self_loop = parse_bool(key, value);
    else if (key == "shared_graph_params") m.shared_graph_params = parse_bool(key, value);
    else if (key == "epochs") t.epochs = parse_number<std::size_t>(key, value);
    else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "lr") t.adam.lr = parse_number<double>(key, value);
    else if (key == "beta1") t.adam.beta1 = parse_number<double>(key, value);
    else if (key == "beta2") t.adam.beta2 = parse_number<double>(key, value);
    else if (key == "adam_eps") t.adam.eps = parse_number<double>(key, value);
    else if (key == "l2") t.l2 = parse_number<double>(key, value);
    else if (key == "patience") t.patience = parse_number<std::size_t>(key, value);
    else if (key == "seed") s.set_seed(parse_number<std::uint64_t>(key, value));
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

inline void apply_config_file(RunSettings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  for (const auto& [key, value] : read_key_values(in)) apply_setting(s, key, value);
}

}  // namespace mhqa
