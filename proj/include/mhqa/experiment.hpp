#pragma once

// One train-then-evaluate run, repeated over seeds, and the edge-type
// ablation rows.

#include <algorithm>
#include <string>
#include <vector>

#include "mhqa/config.hpp"
#include "mhqa/graph.hpp"
#include "mhqa/model.hpp"
#include "mhqa/training.hpp"

namespace mhqa {

struct RunResult {
  std::uint64_t seed = 0;
  double dev_accuracy = 0.0;
  TrainReport report;
};

/// Builds a fresh model over the training vocabulary and trains it.
inline RunResult run_experiment(const RunSettings& settings, const Dataset& train_set, const Dataset& dev,
                                const EpochCallback& on_epoch = {}) {
  const auto vocab = collect_vocabulary({&train_set});
  const ModelConfig& mc = settings.model;
  Model model(mc, EmbeddingTable(vocab, mc.embedding_dim, mc.embedding_init, mc.seed));
  RunResult r;
  r.seed = mc.seed;
  r.report = train(model, train_set, &dev, settings.train, on_epoch);
  r.dev_accuracy = evaluate(model, dev);
  return r;
}

/// Seed of the k-th repeat derived from one base seed.
inline std::uint64_t repeat_seed(std::uint64_t base, std::size_t k) { return base + 1000 * k; }

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationRow {
  std::string name;
  EdgeFilter edges;
};

inline std::vector<AblationRow> ablation_rows() {
  return {{"all", EdgeFilter::all()},
          {"w/o same", EdgeFilter::without(EdgeType::Same)},
          {"w/o coref", EdgeFilter::without(EdgeType::Coref)},
          {"w/o window", EdgeFilter::without(EdgeType::Window)},
          {"only same", EdgeFilter::only(EdgeType::Same)},
          {"only coref", EdgeFilter::only(EdgeType::Coref)},
          {"only window", EdgeFilter::only(EdgeType::Window)}};
}

}  // namespace mhqa
