#pragma once

// Reader models: encoders, optional graph integration, matcher.

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mhqa/autodiff.hpp"
#include "mhqa/data_model.hpp"
#include "mhqa/encoders.hpp"
#include "mhqa/graph.hpp"
#include "mhqa/graph_encoders.hpp"
#include "mhqa/matcher.hpp"

namespace mhqa {

enum class ModelKind {
  Local,      // BiLSTM, scores from mention representations only
  CorefLstm,  // DAG-LSTM over sequential plus coreference edges
  CorefGrn,   // BiLSTM + GRN over coreference edges
  MhqaGrn,    // BiLSTM + GRN over the typed evidence graph
  MhqaGcn,    // BiLSTM + GCN over the typed evidence graph
};

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "local") return ModelKind::Local;
  if (s == "coref-lstm") return ModelKind::CorefLstm;
  if (s == "coref-grn") return ModelKind::CorefGrn;
  if (s == "mhqa-grn") return ModelKind::MhqaGrn;
  if (s == "mhqa-gcn") return ModelKind::MhqaGcn;
  throw std::invalid_argument("unknown model '" + std::string(s) +
                              "' (expected local, coref-lstm, coref-grn, mhqa-grn, mhqa-gcn)");
}

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Local: return "local";
    case ModelKind::CorefLstm: return "coref-lstm";
    case ModelKind::CorefGrn: return "coref-grn";
    case ModelKind::MhqaGrn: return "mhqa-grn";
    case ModelKind::MhqaGcn: return "mhqa-gcn";
  }
  return "?";
}

inline bool uses_graph(ModelKind k) {
  return k == ModelKind::CorefGrn || k == ModelKind::MhqaGrn || k == ModelKind::MhqaGcn;
}

struct ModelConfig {
  ModelKind kind = ModelKind::MhqaGrn;
  std::size_t embedding_dim = 300;
  std::size_t hidden = 300;
  std::size_t steps = 3;
  double embedding_init = 0.1;
  bool train_embeddings = false;
  double dropout = 0.1;
  EdgeFilter edges = EdgeFilter::all();
  GraphConfig graph;
  CandidateActivation lstm_update = CandidateActivation::Tanh;
  CandidateActivation dag_update = CandidateActivation::Sigmoid;
  CandidateActivation graph_update = CandidateActivation::Sigmoid;
  bool self_loop = false;
  bool shared_graph_params = true;
  std::uint64_t seed = 1;

  /// Graph steps actually run; zero for the models without a graph encoder.
  std::size_t effective_steps() const { return uses_graph(kind) ? steps : 0; }

  /// Edge types seen by the graph encoder.
  EdgeFilter effective_edges() const { return kind == ModelKind::CorefGrn ? EdgeFilter::only(EdgeType::Coref) : edges; }

  void validate() const {
    if (embedding_dim == 0 || hidden == 0) throw std::invalid_argument("embedding and hidden sizes must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0,1)");
    if (embedding_init <= 0.0) throw std::invalid_argument("embedding init bound must be positive");
    graph.validate();
  }
};

/// Everything about an instance that does not depend on parameters.
struct PreparedInstance {
  const Instance* instance = nullptr;
  std::vector<std::size_t> context_rows;
  std::vector<std::size_t> question_rows;
  CandidateLinks links;
  ScorableMentions scorable;
  EvidenceGraph graph;
  Predecessors dag;

  /// The loss is defined only when some mention links to the answer.
  bool answer_linked() const {
    for (std::size_t s : scorable.slots) {
      if (s == instance->answer_index) return true;
    }
    return false;
  }
};

class Model {
 public:
  Model(ModelConfig config, EmbeddingTable embeddings) : config_(std::move(config)), embeddings_(std::move(embeddings)) {
    config_.validate();
    if (embeddings_.dim() != config_.embedding_dim) {
      throw ShapeError("embedding table has dimension " + std::to_string(embeddings_.dim()) + ", config says " +
                       std::to_string(config_.embedding_dim));
    }
    embeddings_.set_trainable(config_.train_embeddings);
    const std::size_t D = config_.embedding_dim, H = config_.hidden;
    const std::uint64_t seed = config_.seed;
    passage_fw_ = LstmParams::create(params_, "passage.fw", D, H, seed);
    passage_bw_ = LstmParams::create(params_, "passage.bw", D, H, seed);
    question_fw_ = LstmParams::create(params_, "question.fw", D, H, seed);
    question_bw_ = LstmParams::create(params_, "question.bw", D, H, seed);
    mention_proj_ = ProjectionParams::create(params_, "mention.proj", H, H, seed);
    question_proj_ = ProjectionParams::create(params_, "question.proj", H, H, seed);
    const std::size_t T = config_.effective_steps();
    for (std::size_t t = 0; t <= T; ++t) {
      attention_.push_back(AttentionParams::create(params_, "attention." + std::to_string(t), H, H, H, seed));
    }
    combine_ = StepCombination::create(params_, T);
    if (uses_graph(config_.kind)) {
      graph_ = GraphEncoderParams::create(params_, graph_config(), H, H, H, seed);
    }
  }

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  EmbeddingTable& embeddings() { return embeddings_; }
  const EmbeddingTable& embeddings() const { return embeddings_; }

  /// Parameters updated by training, including the embedding matrix when trainable.
  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out = params_.trainable();
    if (embeddings_.trainable()) out.push_back(&embeddings_.matrix());
    return out;
  }

  GraphEncoderConfig graph_config() const {
    GraphEncoderConfig g;
    g.steps = config_.effective_steps();
    g.kind = config_.kind == ModelKind::MhqaGcn ? GraphEncoderKind::GCN : GraphEncoderKind::GRN;
    g.update = config_.graph_update;
    g.self_loop = config_.self_loop;
    g.shared_params = config_.shared_graph_params;
    g.message_dropout = config_.dropout;
    return g;
  }

  PreparedInstance prepare(const Instance& inst) const {
    PreparedInstance p;
    p.instance = &inst;
    p.context_rows.reserve(inst.context.size());
    for (const auto& t : inst.context.tokens) p.context_rows.push_back(embeddings_.lookup(t));
    for (const auto& t : inst.question.tokens) p.question_rows.push_back(embeddings_.lookup(t));
    p.links = link_candidates(inst);
    p.scorable = scorable_mentions(p.links, inst.candidates.size());
    if (uses_graph(config_.kind)) p.graph = build_capped_graph(inst, config_.graph, config_.effective_edges());
    if (config_.kind == ModelKind::CorefLstm) p.dag = build_coref_dag(inst);
    return p;
  }

  /// Candidate distribution. Dropout is applied only when `rng` is given.
  Var forward(Tape& tape, const PreparedInstance& p, std::mt19937_64* rng = nullptr) {
    const Instance& inst = *p.instance;
    const double rate = rng ? config_.dropout : 0.0;
    const auto drop = [&](Var v) { return rate > 0.0 ? dropout(v, rate, *rng) : v; };

    std::vector<Var> context = embed(tape, p.context_rows, embeddings_);
    for (Var& v : context) v = drop(v);
    std::vector<Var> question = embed(tape, p.question_rows, embeddings_);
    for (Var& v : question) v = drop(v);

    EncodedSequence passage_states =
        config_.kind == ModelKind::CorefLstm
            ? dag_lstm_encode(tape, context, p.dag, passage_fw_, passage_bw_, config_.dag_update)
            : bilstm_encode(tape, context, passage_fw_, passage_bw_, config_.lstm_update);
    EncodedSequence question_states = bilstm_encode(tape, question, question_fw_, question_bw_, config_.lstm_update);

    const Var hq = drop(question_representation(tape, question_states, question_proj_));
    std::vector<Var> mentions;
    mentions.reserve(inst.mentions.size());
    for (const auto& m : inst.mentions) mentions.push_back(drop(mention_representation(tape, passage_states, m, mention_proj_)));

    if (p.scorable.nodes.empty()) throw std::invalid_argument("no scorable candidates");
    std::vector<std::vector<Var>> scores;
    scores.push_back(attention_scores(tape, mentions, p.scorable.nodes, hq, attention_[0]));
    if (config_.effective_steps() > 0) {
      const auto states = run_graph_encoder(tape, p.graph, mentions, hq, graph_config(), graph_, rng);
      for (std::size_t t = 1; t < states.size(); ++t) {
        scores.push_back(attention_scores(tape, states[t].hidden, p.scorable.nodes, hq, attention_[t]));
      }
    }
    return candidate_distribution(combine_steps(tape, scores, combine_), p.scorable);
  }

  /// l2 * sum of squared trainable parameters, or nullopt when l2 is zero.
  std::optional<Var> regularizer(Tape& tape, double l2) {
    if (l2 == 0.0) return std::nullopt;
    std::vector<Var> parts;
    for (Parameter* q : trainable_parameters()) parts.push_back(sum_squares(tape.param(*q)));
    if (parts.empty()) return std::nullopt;
    return scale(parts.size() == 1 ? parts.front() : sum_n(parts), l2);
  }

  /// -log Pr(answer) [+ l2 penalty].
  Var loss(Tape& tape, const PreparedInstance& p, std::mt19937_64* rng = nullptr, double l2 = 0.0) {
    if (!p.answer_linked()) throw std::invalid_argument("answer has no linked mention");
    Var probs = forward(tape, p, rng);
    Var nll = scale(log(pick(probs, p.instance->answer_index)), -1.0);
    if (auto reg = regularizer(tape, l2)) return nll + *reg;
    return nll;
  }

  std::vector<double> predict(const PreparedInstance& p) {
    Tape tape(false);
    return forward(tape, p).value().values;
  }

 private:
  ModelConfig config_;
  EmbeddingTable embeddings_;
  ParameterSet params_;
  LstmParams passage_fw_, passage_bw_, question_fw_, question_bw_;
  ProjectionParams mention_proj_, question_proj_;
  std::vector<AttentionParams> attention_;
  StepCombination combine_;
  GraphEncoderParams graph_;
};

/// Vocabulary in first-seen order over questions, passages and candidates.
inline std::vector<std::string> collect_vocabulary(const std::vector<const Dataset*>& datasets) {
  std::vector<std::string> words;
  std::unordered_map<std::string, bool> seen;
  const auto visit = [&](const std::string& w) {
    if (seen.emplace(w, true).second) words.push_back(w);
  };
  for (const Dataset* ds : datasets) {
    for (const auto& inst : ds->instances) {
      for (const auto& t : inst.question.tokens) visit(t);
      for (const auto& t : inst.context.tokens) visit(t);
    }
  }
  return words;
}

}  // namespace mhqa
