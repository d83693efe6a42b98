#pragma once

// Word embeddings and the two passage encoders: a chain BiLSTM and a
// bidirectional DAG-LSTM whose extra edges follow coreference chains.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "mhqa/autodiff.hpp"
#include "mhqa/data_model.hpp"

namespace mhqa {

/// Deterministic per-name generator so that a parameter's initial value does
/// not depend on which other parameters the model happens to create.
inline std::mt19937_64 named_rng(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values) v = dist(rng);
  return t;
}

inline Parameter& add_uniform(ParameterSet& params, const std::string& name, Shape shape, double bound,
                              std::uint64_t seed) {
  auto rng = named_rng(seed, name);
  return params.add(name, uniform_tensor(std::move(shape), bound, rng));
}

// ---------------------------------------------------------------------------
// Embeddings.

class EmbeddingTable {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  EmbeddingTable() = default;

  /// Row 0 is the UNK row; vocabulary words follow in first-seen order.
  EmbeddingTable(const std::vector<std::string>& words, std::size_t dim, double init_bound, std::uint64_t seed)
      : dim_(dim) {
    words_.emplace_back(kUnknown);
    index_.emplace(std::string(kUnknown), 0);
    for (const auto& w : words) {
      if (index_.emplace(w, words_.size()).second) words_.push_back(w);
    }
    auto rng = named_rng(seed, "embedding");
    matrix_ = std::make_unique<Parameter>("embedding", uniform_tensor({words_.size(), dim}, init_bound, rng));
    matrix_->trainable = false;
  }

  EmbeddingTable(std::vector<std::string> words, Tensor matrix) : dim_(matrix.cols()) {
    if (words.empty() || words.front() != kUnknown) throw std::invalid_argument("embedding vocabulary must start with " + std::string(kUnknown));
    if (matrix.rank() != 2 || matrix.rows() != words.size()) {
      throw ShapeError("embedding matrix " + shape_string(matrix.shape) + " does not match vocabulary of " +
                       std::to_string(words.size()));
    }
    words_ = std::move(words);
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
    matrix_ = std::make_unique<Parameter>("embedding", std::move(matrix));
    matrix_->trainable = false;
  }

  std::size_t dim() const { return dim_; }
  std::size_t vocabulary_size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::size_t lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
  }

  Parameter& matrix() { return *matrix_; }
  const Parameter& matrix() const { return *matrix_; }

  bool trainable() const { return matrix_->trainable; }
  void set_trainable(bool on) { matrix_->trainable = on; }

  /// Overwrites rows for words found in a GloVe-style text file
  /// ("token v1 ... vD" per line). Returns the number of rows replaced.
  std::size_t load_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    std::string line;
    std::size_t replaced = 0, line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::istringstream fields(line);
      std::string token;
      if (!(fields >> token)) continue;
      std::vector<double> vec;
      double v;
      while (fields >> v) vec.push_back(v);
      if (vec.size() != dim_) {
        throw ParseError("embedding file line " + std::to_string(line_no) + ": expected " + std::to_string(dim_) +
                         " values, got " + std::to_string(vec.size()));
      }
      auto it = index_.find(token);
      if (it == index_.end()) continue;
      std::copy(vec.begin(), vec.end(), matrix_->value.values.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
      ++replaced;
    }
    return replaced;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unique_ptr<Parameter> matrix_;
};

/// One embedding row per token; out-of-vocabulary tokens get the UNK row.
inline std::vector<Var> embed(Tape& tape, const std::vector<std::string>& tokens, EmbeddingTable& table) {
  std::vector<Var> out;
  out.reserve(tokens.size());
  if (table.trainable()) {
    Var m = tape.param(table.matrix());
    for (const auto& t : tokens) out.push_back(row(m, table.lookup(t)));
    return out;
  }
  const std::size_t d = table.dim();
  const auto& values = table.matrix().value.values;
  for (const auto& t : tokens) {
    const std::size_t r = table.lookup(t);
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(r * d),
                          values.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    out.push_back(tape.constant(Tensor::vector(std::move(v))));
  }
  return out;
}

/// Same as above for pre-resolved vocabulary rows.
inline std::vector<Var> embed(Tape& tape, const std::vector<std::size_t>& rows, EmbeddingTable& table) {
  std::vector<Var> out;
  out.reserve(rows.size());
  if (table.trainable()) {
    Var m = tape.param(table.matrix());
    for (std::size_t r : rows) out.push_back(row(m, r));
    return out;
  }
  const std::size_t d = table.dim();
  const auto& values = table.matrix().value.values;
  for (std::size_t r : rows) {
    if (r >= table.vocabulary_size()) throw std::out_of_range("embedding row " + std::to_string(r) + " out of range");
    std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(r * d),
                          values.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    out.push_back(tape.constant(Tensor::vector(std::move(v))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSTM parameters and encoders.

enum class CandidateActivation { Sigmoid, Tanh };

inline CandidateActivation parse_candidate_activation(std::string_view s) {
  if (s == "sigmoid") return CandidateActivation::Sigmoid;
  if (s == "tanh") return CandidateActivation::Tanh;
  throw std::invalid_argument("candidate update must be tanh or sigmoid, got '" + std::string(s) + "'");
}

inline std::string_view to_string(CandidateActivation a) {
  return a == CandidateActivation::Sigmoid ? "sigmoid" : "tanh";
}

inline Var activate(const Var& x, CandidateActivation a) {
  return a == CandidateActivation::Sigmoid ? sigmoid(x) : tanh(x);
}

/// Gate order used for every gated layer: input, output, forget, update.
/// Gate weights are stacked row-wise in that order.
enum Gate : std::size_t { kInput = 0, kOutput = 1, kForget = 2, kUpdate = 3 };

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  Parameter* W = nullptr;  // 4H x D
  Parameter* U = nullptr;  // 4H x H
  Parameter* b = nullptr;  // 4H

  /// Registers prefix.W, prefix.U, prefix.b drawn from U(-1/sqrt(H), 1/sqrt(H)).
  static LstmParams create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden, std::uint64_t seed) {
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    p.W = &add_uniform(params, prefix + ".W", {4 * hidden, input_dim}, bound, seed);
    p.U = &add_uniform(params, prefix + ".U", {4 * hidden, hidden}, bound, seed);
    p.b = &add_uniform(params, prefix + ".b", {4 * hidden}, bound, seed);
    return p;
  }
};

struct EncodedSequence {
  std::vector<Var> forward_states;
  std::vector<Var> backward_states;

  std::size_t size() const { return forward_states.size(); }
};

/// Predecessor lists of a DAG over token positions.
using Predecessors = std::vector<std::vector<std::size_t>>;

namespace detail {

inline Var gate(const Var& stacked, Gate g, std::size_t hidden) { return slice(stacked, g * hidden, hidden); }

/// DAG-LSTM over positions visited in `order`; preds[j] lists positions whose
/// states feed j and must all be visited before j. The chain LSTM is the case
/// preds[j] = {previous position}. Input, output and update gates read the
/// sum of predecessor states; each predecessor gets its own forget gate.
inline std::vector<Var> run_dag(Tape& tape, const std::vector<Var>& inputs, const Predecessors& preds,
                                const std::vector<std::size_t>& order, const LstmParams& params,
                                CandidateActivation update) {
  const Var W = tape.param(*params.W);
  const Var U = tape.param(*params.U);
  const Var b = tape.param(*params.b);
  const std::size_t H = params.hidden;
  const std::size_t n = inputs.size();
  std::vector<Var> h(n), c(n);
  std::vector<char> done(n, 0);
  for (std::size_t j : order) {
    for (std::size_t i : preds[j]) {
      if (!done[i]) throw std::invalid_argument("DAG predecessor visited after its successor (cycle or misordered edge)");
    }
    const Var pre = affine(W, inputs[j], b);
    Var z = pre;
    if (preds[j].size() == 1) {
      z = z + matmul(U, h[preds[j].front()]);
    } else if (preds[j].size() > 1) {
      std::vector<Var> hs;
      hs.reserve(preds[j].size());
      for (std::size_t i : preds[j]) hs.push_back(h[i]);
      z = z + matmul(U, sum_n(hs));
    }
    const Var gate_i = sigmoid(gate(z, kInput, H));
    const Var gate_o = sigmoid(gate(z, kOutput, H));
    const Var gate_u = activate(gate(z, kUpdate, H), update);
    Var cell = gate_i * gate_u;
    if (preds[j].size() == 1) {
      cell = cell + sigmoid(gate(z, kForget, H)) * c[preds[j].front()];
    } else if (preds[j].size() > 1) {
      const Var forget_input = gate(pre, kForget, H);
      for (std::size_t i : preds[j]) {
        const Var f = sigmoid(forget_input + gate(matmul(U, h[i]), kForget, H));
        cell = cell + f * c[i];
      }
    }
    c[j] = cell;
    h[j] = gate_o * tanh(cell);
    done[j] = 1;
  }
  return h;
}

inline Predecessors chain_predecessors(std::size_t n) {
  Predecessors p(n);
  for (std::size_t j = 1; j < n; ++j) p[j] = {j - 1};
  return p;
}

inline std::vector<std::size_t> ascending(std::size_t n) {
  std::vector<std::size_t> o(n);
  for (std::size_t i = 0; i < n; ++i) o[i] = i;
  return o;
}

inline std::vector<std::size_t> descending(std::size_t n) {
  std::vector<std::size_t> o(n);
  for (std::size_t i = 0; i < n; ++i) o[i] = n - 1 - i;
  return o;
}

}  // namespace detail

/// Unidirectional chain LSTM from a zero initial state.
inline std::vector<Var> lstm_encode(Tape& tape, const std::vector<Var>& inputs, const LstmParams& params,
                                    CandidateActivation update = CandidateActivation::Tanh, bool reverse = false) {
  const std::size_t n = inputs.size();
  if (n == 0) throw std::invalid_argument("cannot encode an empty sequence");
  Predecessors preds(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!reverse && j > 0) preds[j] = {j - 1};
    if (reverse && j + 1 < n) preds[j] = {j + 1};
  }
  return detail::run_dag(tape, inputs, preds, reverse ? detail::descending(n) : detail::ascending(n), params,
                         update);
}

inline EncodedSequence bilstm_encode(Tape& tape, const std::vector<Var>& inputs, const LstmParams& forward,
                                     const LstmParams& backward,
                                     CandidateActivation update = CandidateActivation::Tanh) {
  EncodedSequence out;
  out.forward_states = lstm_encode(tape, inputs, forward, update, false);
  out.backward_states = lstm_encode(tape, inputs, backward, update, true);
  return out;
}

/// Bidirectional DAG-LSTM. `preds` describes the forward DAG (every
/// predecessor index is smaller than its successor); the backward pass runs
/// over the same DAG with every edge reversed.
inline EncodedSequence dag_lstm_encode(Tape& tape, const std::vector<Var>& inputs, const Predecessors& preds,
                                       const LstmParams& forward, const LstmParams& backward,
                                       CandidateActivation update = CandidateActivation::Sigmoid) {
  const std::size_t n = inputs.size();
  if (n == 0) throw std::invalid_argument("cannot encode an empty sequence");
  if (preds.size() != n) throw std::invalid_argument("DAG has " + std::to_string(preds.size()) + " nodes for " + std::to_string(n) + " tokens");
  Predecessors reversed(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i : preds[j]) {
      if (i >= j) {
        throw std::invalid_argument("forward DAG edge " + std::to_string(i) + "->" + std::to_string(j) +
                                    " violates token order");
      }
      reversed[i].push_back(j);
    }
  }
  EncodedSequence out;
  out.forward_states = detail::run_dag(tape, inputs, preds, detail::ascending(n), forward, update);
  out.backward_states = detail::run_dag(tape, inputs, reversed, detail::descending(n), backward, update);
  return out;
}

/// Sequential edges plus, for every chain, an edge from each occurrence's end
/// token to the next occurrence's start token.
inline Predecessors build_coref_dag(const Instance& inst) {
  const std::size_t n = inst.context.size();
  Predecessors preds = detail::chain_predecessors(n);
  std::map<std::string, std::vector<const MentionAnnotation*>> chains;
  for (const auto& m : inst.mentions) chains[m.chain_id].push_back(&m);
  for (auto& [chain, ms] : chains) {
    std::sort(ms.begin(), ms.end(), [](const MentionAnnotation* a, const MentionAnnotation* b) {
      return std::tie(a->span_start, a->span_end) < std::tie(b->span_start, b->span_end);
    });
    for (std::size_t k = 1; k < ms.size(); ++k) {
      const std::size_t from = ms[k - 1]->span_end;
      const std::size_t to = ms[k]->span_start;
      if (from >= to) continue;
      auto& p = preds[to];
      if (std::find(p.begin(), p.end(), from) == p.end()) p.push_back(from);
    }
  }
  for (auto& p : preds) std::sort(p.begin(), p.end());
  return preds;
}

}  // namespace mhqa
