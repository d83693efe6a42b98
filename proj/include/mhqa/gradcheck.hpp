#pragma once

// Finite-difference check of -log Pr(answer) for every model variant on a
// handful of small generated instances.

#include <string>
#include <vector>

#include "mhqa/autodiff.hpp"
#include "mhqa/model.hpp"
#include "mhqa/synth.hpp"

namespace mhqa {

struct GradCheckCase {
  std::string variant;
  std::string instance;
  GradCheckResult result;
};

struct GradCheckSuiteConfig {
  std::uint64_t seed = 1;
  std::size_t instances = 5;
  std::size_t embedding_dim = 4;
  std::size_t hidden = 3;
  double eps = 1e-2;
  Difference method = Difference::Richardson;
  bool train_embeddings = true;  // include the embedding matrix among the checked parameters
  double parameter_scale = 0.0;  // > 0 redraws parameters from U(-scale, scale) before checking
};

struct GradCheckVariant {
  std::string name;
  ModelKind kind;
  std::size_t steps;
};

inline std::vector<GradCheckVariant> gradcheck_variants() {
  return {{"local", ModelKind::Local, 0},
          {"coref-lstm", ModelKind::CorefLstm, 0},
          {"coref-grn", ModelKind::CorefGrn, 2},
          {"mhqa-gcn", ModelKind::MhqaGcn, 3},
          {"mhqa-grn", ModelKind::MhqaGrn, 3}};
}

/// Small instances mixing both layouts so that coreference edges cross
/// passages and DAG positions with several predecessors occur.
inline Dataset gradcheck_instances(const GradCheckSuiteConfig& config) {
  GenConfig g;
  g.seed = config.seed;
  g.num_instances = config.instances;
  g.hops = 2;
  g.candidates = 3;
  g.entities = 12;
  g.fillers = 3;
  g.max_filler = 1;
  g.pronoun_fraction = 0.5;
  g.alias_fraction = 0.4;
  g.id_prefix = "toy";
  return generate(g);
}

using GradCheckProgress = std::function<void(const GradCheckCase&)>;

inline std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteConfig& config,
                                                      const GradCheckProgress& progress = {}) {
  const Dataset data = gradcheck_instances(config);
  const auto vocab = collect_vocabulary({&data});
  std::vector<GradCheckCase> out;
  for (const auto& v : gradcheck_variants()) {
    ModelConfig mc;
    mc.kind = v.kind;
    mc.steps = v.steps;
    mc.embedding_dim = config.embedding_dim;
    mc.hidden = config.hidden;
    mc.embedding_init = 1.0;
    mc.train_embeddings = config.train_embeddings;
    mc.dropout = 0.0;
    mc.seed = config.seed;
    Model model(mc, EmbeddingTable(vocab, mc.embedding_dim, mc.embedding_init, mc.seed));
    const std::vector<Parameter*> params = model.trainable_parameters();
    if (config.parameter_scale > 0.0) {
      for (Parameter* p : params) {
        auto rng = named_rng(config.seed + 1, p->name);
        p->value = uniform_tensor(p->value.shape, config.parameter_scale, rng);
      }
    }
    for (const auto& inst : data.instances) {
      const PreparedInstance prepared = model.prepare(inst);
      if (!prepared.answer_linked()) continue;
      GradCheckCase c;
      c.variant = v.name;
      c.instance = inst.id;
      c.result = grad_check([&](Tape& tape) { return model.loss(tape, prepared); }, params, config.eps, config.method);
      if (progress) progress(c);
      out.push_back(std::move(c));
    }
  }
  return out;
}

inline double worst_error(const std::vector<GradCheckCase>& cases) {
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, c.result.max_relative_error);
  return worst;
}

}  // namespace mhqa
