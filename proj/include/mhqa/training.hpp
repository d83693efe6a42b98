#pragma once

// Adam, the training loop with dev-based early stopping, and evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhqa/autodiff.hpp"
#include "mhqa/model.hpp"

namespace mhqa {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list; reads Parameter::grad.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config = {}) : params_(std::move(params)), config_(config) {
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value.values;
      const auto& g = params_[k]->grad.values;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  AdamConfig adam;
  double l2 = 1e-8;
  std::size_t patience = 5;  // epochs without dev improvement before stopping; 0 disables
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (adam.lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (l2 < 0.0) throw std::invalid_argument("l2 must be non-negative");
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;  // data term averaged over used instances
  double dev_accuracy = -1.0;  // -1 without a dev set
  double seconds = 0.0;
  bool improved = false;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t used = 0;     // training instances with a linked answer
  std::size_t skipped = 0;  // training instances whose answer has no linked mention
  std::size_t best_epoch = 0;
  double best_dev_accuracy = -1.0;
  bool stopped_early = false;
  double seconds = 0.0;

  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.mean_loss);
    return out;
  }
};

/// Dropout generator for one instance visit; independent of batch layout.
inline std::mt19937_64 dropout_rng(std::uint64_t seed, std::size_t epoch, std::size_t instance) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(instance), 0x64726f70u};
  return std::mt19937_64(seq);
}

struct Prediction {
  std::string id;
  std::vector<double> probs;  // empty when nothing could be scored
  std::size_t argmax = 0;
  bool correct = false;
};

inline std::vector<Prediction> predict(Model& model, const Dataset& ds) {
  std::vector<Prediction> out;
  out.reserve(ds.size());
  for (const auto& inst : ds.instances) {
    Prediction p;
    p.id = inst.id;
    const PreparedInstance prepared = model.prepare(inst);
    if (!prepared.scorable.nodes.empty()) {
      p.probs = model.predict(prepared);
      p.argmax = argmax(p.probs);
      p.correct = p.argmax == inst.answer_index;
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Fraction of instances whose argmax candidate (lowest index on ties) is
/// the answer. Instances with no scorable mention count as wrong.
inline double accuracy(const std::vector<Prediction>& preds) {
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& p : preds) correct += p.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

inline double evaluate(Model& model, const Dataset& ds) { return accuracy(predict(model, ds)); }

namespace detail {

inline std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

inline void restore(const std::vector<Parameter*>& params, const std::vector<Tensor>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = values[k];
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch training on -log Pr(answer) + l2 * sum ||theta||^2. With a dev
/// set, the parameters of the best dev epoch are restored at the end.
inline TrainReport train(Model& model, const Dataset& train_set, const Dataset* dev, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;

  std::vector<PreparedInstance> prepared;
  std::vector<std::size_t> usable;
  prepared.reserve(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    prepared.push_back(model.prepare(train_set.instances[i]));
    if (prepared.back().answer_linked()) {
      usable.push_back(i);
    } else {
      ++report.skipped;
    }
  }
  report.used = usable.size();
  if (usable.empty()) throw TrainingError("no training instance has a linked answer");

  std::vector<Parameter*> params = model.trainable_parameters();
  Adam adam(params, config.adam);
  std::mt19937_64 order_rng(config.seed);
  std::vector<Tensor> best = detail::snapshot(params);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = usable;
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (Parameter* p : params) p->zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        auto rng = dropout_rng(config.seed, epoch, i);
        try {
          Tape tape;
          Var loss = model.loss(tape, prepared[i], &rng);
          total += loss.item();
          tape.backward(loss);
        } catch (const NumericError& e) {
          throw TrainingError("non-finite loss on instance '" + train_set.instances[i].id + "' in epoch " +
                              std::to_string(epoch) + ": " + e.what());
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (Parameter* p : params) {
        auto& g = p->grad.values;
        const auto& w = p->value.values;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = g[k] * inv + 2.0 * config.l2 * w[k];
      }
      adam.step();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = total / static_cast<double>(order.size());
    if (!std::isfinite(stats.mean_loss)) throw TrainingError("non-finite mean loss in epoch " + std::to_string(epoch));
    if (dev) {
      stats.dev_accuracy = evaluate(model, *dev);
      if (stats.dev_accuracy > report.best_dev_accuracy) {
        report.best_dev_accuracy = stats.dev_accuracy;
        report.best_epoch = epoch;
        best = detail::snapshot(params);
        since_best = 0;
        stats.improved = true;
      } else {
        ++since_best;
      }
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (dev && config.patience > 0 && since_best >= config.patience) {
      report.stopped_early = epoch < config.epochs;
      break;
    }
  }
  if (dev) detail::restore(params, best);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace mhqa
