#pragma once

// Mention and question representations, per-step additive attention, and the
// occurrence-merged candidate distribution.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mhqa/autodiff.hpp"
#include "mhqa/data_model.hpp"
#include "mhqa/encoders.hpp"

namespace mhqa {

/// Projection of the four boundary states [bw(a); fw(a); bw(b); fw(b)].
struct ProjectionParams {
  Parameter* W = nullptr;
  Parameter* b = nullptr;

  static ProjectionParams create(ParameterSet& params, const std::string& prefix, std::size_t state_dim,
                                 std::size_t out_dim, std::uint64_t seed) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(4 * state_dim));
    return {&add_uniform(params, prefix + ".W", {out_dim, 4 * state_dim}, bound, seed),
            &add_uniform(params, prefix + ".b", {out_dim}, bound, seed)};
  }
};

namespace detail {

inline Var project_boundaries(Tape& tape, const EncodedSequence& enc, std::size_t first, std::size_t last,
                              const ProjectionParams& p) {
  if (last >= enc.size() || first > last) {
    throw std::out_of_range("span [" + std::to_string(first) + ", " + std::to_string(last) + "] outside " +
                            std::to_string(enc.size()) + " encoded positions");
  }
  Var x = concat({enc.backward_states[first], enc.forward_states[first], enc.backward_states[last],
                  enc.forward_states[last]});
  return affine(tape.param(*p.W), x, tape.param(*p.b));
}

}  // namespace detail

/// h_k = W [bw(start); fw(start); bw(end); fw(end)] + b.
inline Var mention_representation(Tape& tape, const EncodedSequence& passage, const MentionAnnotation& m,
                                  const ProjectionParams& p) {
  return detail::project_boundaries(tape, passage, m.span_start, m.span_end, p);
}

/// h_q = W [bw(0); fw(0); bw(M-1); fw(M-1)] + b.
inline Var question_representation(Tape& tape, const EncodedSequence& question, const ProjectionParams& p) {
  return detail::project_boundaries(tape, question, 0, question.size() - 1, p);
}

/// e = v . tanh(W h + U h_q + b) for one step.
struct AttentionParams {
  Parameter* W = nullptr;
  Parameter* U = nullptr;
  Parameter* b = nullptr;
  Parameter* v = nullptr;

  static AttentionParams create(ParameterSet& params, const std::string& prefix, std::size_t state_dim,
                                std::size_t question_dim, std::size_t attn_dim, std::uint64_t seed) {
    AttentionParams a;
    a.W = &add_uniform(params, prefix + ".W", {attn_dim, state_dim}, 1.0 / std::sqrt(double(state_dim)), seed);
    a.U = &add_uniform(params, prefix + ".U", {attn_dim, question_dim}, 1.0 / std::sqrt(double(question_dim)), seed);
    a.b = &add_uniform(params, prefix + ".b", {attn_dim}, 1.0 / std::sqrt(double(attn_dim)), seed);
    a.v = &add_uniform(params, prefix + ".v", {attn_dim}, 1.0 / std::sqrt(double(attn_dim)), seed);
    return a;
  }
};

/// Scores for the given nodes; U h_q is shared across nodes.
inline std::vector<Var> attention_scores(Tape& tape, const std::vector<Var>& states,
                                         const std::vector<std::size_t>& nodes, const Var& question_rep,
                                         const AttentionParams& p) {
  Var W = tape.param(*p.W);
  Var v = tape.param(*p.v);
  Var query = affine(tape.param(*p.U), question_rep, tape.param(*p.b));
  std::vector<Var> out;
  out.reserve(nodes.size());
  for (std::size_t k : nodes) out.push_back(dot(v, tanh(matmul(W, states.at(k)) + query)));
  return out;
}

/// Combines per-step scores e_0..e_T into one logit: w . [e_0..e_T] + b.
struct StepCombination {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  /// Starts as the plain sum of the step scores.
  static StepCombination create(ParameterSet& params, std::size_t steps) {
    return {&params.add("combine.w", Tensor(Shape{steps + 1}, 1.0)), &params.add("combine.b", Tensor(Shape{1}))};
  }
};

/// step_scores[t][n] is the step-t score of linked node n.
inline Var combine_steps(Tape& tape, const std::vector<std::vector<Var>>& step_scores, const StepCombination& p) {
  Var w = tape.param(*p.w);
  Var b = tape.param(*p.b);
  if (w.size() != step_scores.size()) {
    throw ShapeError("step combination has " + std::to_string(w.size()) + " weights for " +
                     std::to_string(step_scores.size()) + " steps");
  }
  const std::size_t n = step_scores.empty() ? 0 : step_scores.front().size();
  std::vector<Var> logits;
  logits.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<Var> per_step;
    per_step.reserve(step_scores.size());
    for (const auto& s : step_scores) per_step.push_back(s.at(k));
    logits.push_back(dot(w, concat(per_step)) + b);
  }
  return concat(logits);
}

/// Linked nodes and the candidate slot of each.
struct ScorableMentions {
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> slots;
  std::size_t candidates = 0;
};

inline ScorableMentions scorable_mentions(const CandidateLinks& links, std::size_t candidates) {
  ScorableMentions s;
  s.candidates = candidates;
  for (std::size_t k = 0; k < links.size(); ++k) {
    if (!links[k]) continue;
    s.nodes.push_back(k);
    s.slots.push_back(*links[k]);
  }
  return s;
}

/// Softmax over the linked mentions' logits, then summed per candidate.
/// Candidates with no linked mention get probability 0.
inline Var candidate_distribution(const Var& logits, const ScorableMentions& s) {
  if (s.nodes.empty()) throw std::invalid_argument("no scorable candidates");
  if (logits.size() != s.nodes.size()) {
    throw ShapeError(std::to_string(logits.size()) + " logits for " + std::to_string(s.nodes.size()) + " mentions");
  }
  return index_sum(softmax(logits), s.slots, s.candidates);
}

/// Lowest index among the maximal entries.
inline std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace mhqa
