#pragma once

// GRN and GCN evidence integration over an EvidenceGraph.

#include <random>
#include <string>
#include <vector>

#include "mhqa/autodiff.hpp"
#include "mhqa/encoders.hpp"
#include "mhqa/graph.hpp"

namespace mhqa {

enum class GraphEncoderKind { GRN, GCN };

struct GraphEncoderConfig {
  std::size_t steps = 3;
  GraphEncoderKind kind = GraphEncoderKind::GRN;
  CandidateActivation update = CandidateActivation::Sigmoid;  // GRN candidate u
  bool self_loop = false;        // include the node itself in its neighborhood
  bool shared_params = true;     // one transition parameter set reused at every step
  double message_dropout = 0.0;
};

/// Node states at one transition step. `cell` is empty for GCN.
struct GraphState {
  std::vector<Var> hidden;
  std::vector<Var> cell;
  std::size_t step = 0;

  std::size_t size() const { return hidden.size(); }
};

struct StateInitParams {
  Parameter* W = nullptr;  // hidden x (mention + question)
  Parameter* b = nullptr;

  static StateInitParams create(ParameterSet& params, std::size_t mention_dim, std::size_t question_dim,
                                std::size_t hidden, std::uint64_t seed) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(mention_dim + question_dim));
    return {&add_uniform(params, "graph.init.W", {hidden, mention_dim + question_dim}, bound, seed),
            &add_uniform(params, "graph.init.b", {hidden}, bound, seed)};
  }
};

/// Gates stacked row-wise in the order input, output, forget, update.
struct GrnParams {
  Parameter* W = nullptr;  // 4H x H
  Parameter* b = nullptr;  // 4H

  static GrnParams create(ParameterSet& params, const std::string& prefix, std::size_t hidden,
                          std::uint64_t seed) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    return {&add_uniform(params, prefix + ".W", {4 * hidden, hidden}, bound, seed),
            &add_uniform(params, prefix + ".b", {4 * hidden}, bound, seed)};
  }
};

struct GcnParams {
  Parameter* W = nullptr;
  Parameter* b = nullptr;

  static GcnParams create(ParameterSet& params, const std::string& prefix, std::size_t hidden,
                          std::uint64_t seed) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    return {&add_uniform(params, prefix + ".W", {hidden, hidden}, bound, seed),
            &add_uniform(params, prefix + ".b", {hidden}, bound, seed)};
  }
};

/// s_0^k = W [h_k; h_q] + b, with zero cells.
inline GraphState init_states(Tape& tape, const std::vector<Var>& mention_reps, const Var& question_rep,
                              const StateInitParams& params) {
  Var W = tape.param(*params.W);
  Var b = tape.param(*params.b);
  if (W.shape()[1] != (mention_reps.empty() ? 0 : mention_reps.front().size()) + question_rep.size() &&
      !mention_reps.empty()) {
    throw ShapeError("state init: W " + shape_string(W.shape()) + " does not match mention " +
                     shape_string(mention_reps.front().shape()) + " + question " + shape_string(question_rep.shape()));
  }
  GraphState state;
  const std::size_t hidden = W.shape()[0];
  Var zero = tape.constant(Tensor(Shape{hidden}));
  for (const Var& h : mention_reps) {
    state.hidden.push_back(affine(W, concat({h, question_rep}), b));
    state.cell.push_back(zero);
  }
  return state;
}

/// Sum of neighbor states from the capped adjacency (edge types ignored);
/// a zero vector when the neighborhood is empty.
inline Var message(Tape& tape, const GraphState& state, const EvidenceGraph& graph, std::size_t node,
                   bool self_loop = false) {
  std::vector<Var> parts;
  parts.reserve(graph.adjacency[node].size() + 1);
  if (self_loop) parts.push_back(state.hidden[node]);
  for (std::size_t v : graph.adjacency[node]) parts.push_back(state.hidden[v]);
  if (parts.empty()) return tape.constant(Tensor(state.hidden[node].shape()));
  if (parts.size() == 1) return parts.front();
  return sum_n(parts);
}

namespace detail {

inline std::vector<Var> all_messages(Tape& tape, const GraphState& state, const EvidenceGraph& graph,
                                     const GraphEncoderConfig& config, std::mt19937_64* rng) {
  if (graph.size() != state.size()) {
    throw ShapeError("graph has " + std::to_string(graph.size()) + " nodes but state has " +
                     std::to_string(state.size()));
  }
  std::vector<Var> m(state.size());
  for (std::size_t k = 0; k < state.size(); ++k) {
    m[k] = message(tape, state, graph, k, config.self_loop);
    if (rng && config.message_dropout > 0.0) m[k] = dropout(m[k], config.message_dropout, *rng);
  }
  return m;
}

}  // namespace detail

/// One synchronous GRN transition; every node reads only step t-1 states.
inline GraphState grn_step(Tape& tape, const GraphState& state, const EvidenceGraph& graph, const GrnParams& params,
                           const GraphEncoderConfig& config = {}, std::mt19937_64* rng = nullptr) {
  const Var W = tape.param(*params.W);
  const Var b = tape.param(*params.b);
  const std::size_t H = W.shape()[1];
  const std::vector<Var> m = detail::all_messages(tape, state, graph, config, rng);
  GraphState next;
  next.step = state.step + 1;
  next.hidden.resize(state.size());
  next.cell.resize(state.size());
  for (std::size_t k = 0; k < state.size(); ++k) {
    const Var z = affine(W, m[k], b);
    const Var i = sigmoid(detail::gate(z, kInput, H));
    const Var o = sigmoid(detail::gate(z, kOutput, H));
    const Var f = sigmoid(detail::gate(z, kForget, H));
    const Var u = activate(detail::gate(z, kUpdate, H), config.update);
    next.cell[k] = f * state.cell[k] + i * u;
    next.hidden[k] = o * tanh(next.cell[k]);
  }
  return next;
}

/// One synchronous GCN transition: s_t = sigmoid(W m + b).
inline GraphState gcn_step(Tape& tape, const GraphState& state, const EvidenceGraph& graph, const GcnParams& params,
                           const GraphEncoderConfig& config = {}, std::mt19937_64* rng = nullptr) {
  Var W = tape.param(*params.W);
  Var b = tape.param(*params.b);
  const std::vector<Var> m = detail::all_messages(tape, state, graph, config, rng);
  GraphState next;
  next.step = state.step + 1;
  next.hidden.resize(state.size());
  for (std::size_t k = 0; k < state.size(); ++k) next.hidden[k] = sigmoid(affine(W, m[k], b));
  return next;
}

/// Transition parameters; holds one set when shared, else one per step.
struct GraphEncoderParams {
  StateInitParams init;
  std::vector<GrnParams> grn;
  std::vector<GcnParams> gcn;

  static GraphEncoderParams create(ParameterSet& params, const GraphEncoderConfig& config, std::size_t mention_dim,
                                   std::size_t question_dim, std::size_t hidden, std::uint64_t seed) {
    GraphEncoderParams p;
    p.init = StateInitParams::create(params, mention_dim, question_dim, hidden, seed);
    const std::size_t sets = config.shared_params ? 1 : std::max<std::size_t>(config.steps, 1);
    for (std::size_t s = 0; s < sets; ++s) {
      std::string prefix = config.kind == GraphEncoderKind::GRN ? "grn" : "gcn";
      if (!config.shared_params) prefix += ".t" + std::to_string(s + 1);
      if (config.kind == GraphEncoderKind::GRN) {
        p.grn.push_back(GrnParams::create(params, prefix, hidden, seed));
      } else {
        p.gcn.push_back(GcnParams::create(params, prefix, hidden, seed));
      }
    }
    return p;
  }
};

/// States g_0 .. g_T, all retained.
inline std::vector<GraphState> run_graph_encoder(Tape& tape, const EvidenceGraph& graph,
                                                 const std::vector<Var>& mention_reps, const Var& question_rep,
                                                 const GraphEncoderConfig& config, const GraphEncoderParams& params,
                                                 std::mt19937_64* rng = nullptr) {
  std::vector<GraphState> states;
  states.reserve(config.steps + 1);
  states.push_back(init_states(tape, mention_reps, question_rep, params.init));
  for (std::size_t t = 1; t <= config.steps; ++t) {
    const std::size_t which = config.shared_params ? 0 : t - 1;
    if (config.kind == GraphEncoderKind::GRN) {
      states.push_back(grn_step(tape, states.back(), graph, params.grn.at(which), config, rng));
    } else {
      states.push_back(gcn_step(tape, states.back(), graph, params.gcn.at(which), config, rng));
    }
  }
  return states;
}

}  // namespace mhqa
