// mhqa: command-line driver for data generation, graph inspection, training,
// evaluation, gradient checking and edge-type ablations.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mhqa/checkpoint.hpp"
#include "mhqa/config.hpp"
#include "mhqa/data_model.hpp"
#include "mhqa/experiment.hpp"
#include "mhqa/gradcheck.hpp"
#include "mhqa/graph.hpp"
#include "mhqa/log.hpp"
#include "mhqa/model.hpp"
#include "mhqa/synth.hpp"
#include "mhqa/training.hpp"

using namespace mhqa;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Flag combinations that parse but make no sense together.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Model and training flags, applied on top of an optional key=value file.

struct SettingFlags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  bool self_loop = false;
  bool train_embeddings = false;
  CLI::Option* self_loop_opt = nullptr;
  CLI::Option* train_embeddings_opt = nullptr;
  std::string config_path;
  std::uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }

  void attach(CLI::App* app, bool training) {
    app->add_option("--config", config_path, "key=value settings file; flags override it");
    add(app, "--model", "model", "local | coref-lstm | coref-grn | mhqa-grn | mhqa-gcn");
    add(app, "--steps", "steps", "graph transition steps (graph models only)");
    add(app, "--hidden", "hidden", "hidden size");
    add(app, "--embedding-dim", "embedding_dim", "embedding size");
    add(app, "--embedding-init", "embedding_init", "random embedding init bound");
    add(app, "--dropout", "dropout", "dropout rate");
    add(app, "--edges", "edges", "edge types for the graph encoder, e.g. same,coref");
    add(app, "--tau-long", "tau_long", "Same/Coref edges need distance above this");
    add(app, "--tau-window", "tau_window", "Window edges need distance at most this");
    add(app, "--neighbor-cap", "neighbor_cap", "maximum neighbors per node");
    add(app, "--candidate-update", "dag_update", "DAG-LSTM candidate activation: sigmoid | tanh");
    add(app, "--graph-update", "graph_update", "GRN candidate activation: sigmoid | tanh");
    self_loop_opt = app->add_flag("--self-loop", self_loop, "include each node among its own neighbors");
    train_embeddings_opt = app->add_flag("--train-embeddings", train_embeddings, "update embeddings during training");
    if (training) {
      add(app, "--epochs", "epochs", "maximum epochs");
      add(app, "--batch-size", "batch_size", "instances per update");
      add(app, "--lr", "lr", "Adam learning rate");
      add(app, "--l2", "l2", "L2 weight");
      add(app, "--patience", "patience", "epochs without dev improvement before stopping (0 disables)");
    }
    seed_opt = app->add_option("--seed", seed, "seed for initialization, dropout and data order");
  }

  bool given(const std::string& key) const {
    for (const auto& [k, opt] : options) {
      if (k == key) return opt->count() > 0;
    }
    return false;
  }

  RunSettings resolve() const {
    RunSettings s;
    if (!config_path.empty()) apply_config_file(s, config_path);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) apply_setting(s, key, values.at(key));
    }
    if (self_loop_opt->count() > 0) s.model.self_loop = self_loop;
    if (train_embeddings_opt->count() > 0) s.model.train_embeddings = train_embeddings;
    if (seed_opt->count() > 0) s.set_seed(seed);
    if (!uses_graph(s.model.kind)) {
      for (const char* key : {"steps", "edges"}) {
        if (given(key)) {
          throw UsageError("--" + std::string(key) + " only applies to graph models, not " +
                           std::string(to_string(s.model.kind)));
        }
      }
    }
    s.model.validate();
    s.train.validate();
    return s;
  }
};

struct GraphFlags {
  std::string edges = "all";
  GraphConfig graph;

  void attach(CLI::App* app) {
    app->add_option("--edges", edges, "edge types to keep, e.g. same,coref (default all)");
    app->add_option("--tau-long", graph.tau_long, "Same/Coref edges need distance above this");
    app->add_option("--tau-window", graph.tau_window, "Window edges need distance at most this");
    app->add_option("--neighbor-cap", graph.neighbor_cap, "maximum neighbors per node");
  }

  EdgeFilter filter() const { return EdgeFilter::parse(edges); }
};

// ---------------------------------------------------------------------------
// Output helpers.

class OutputFile {
 public:
  explicit OutputFile(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw std::runtime_error("cannot write " + path);
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

json histogram_json(const DistanceHistogram& h) {
  json finite = json::object();
  for (const auto& [hops, frac] : h.finite) finite[std::to_string(hops)] = frac;
  return {{"instances", h.instances}, {"finite", finite}, {"unreachable", h.unreachable}};
}

void print_histogram(std::ostream& out, const DistanceHistogram& h) {
  out << "question-answer distance (" << h.instances << " instances)\n";
  for (const auto& [hops, frac] : h.finite) {
    out << "  " << std::setw(4) << hops << "  " << std::fixed << std::setprecision(4) << frac << "\n";
  }
  out << "   inf  " << std::fixed << std::setprecision(4) << h.unreachable << "\n";
  out.unsetf(std::ios::floatfield);
}

json counts_json(const std::map<EdgeType, std::size_t>& counts) {
  json j = json::object();
  for (EdgeType t : {EdgeType::Same, EdgeType::Coref, EdgeType::Window}) {
    auto it = counts.find(t);
    j[std::string(to_string(t))] = it == counts.end() ? 0 : it->second;
  }
  return j;
}

json graph_record(const Instance& inst, const EvidenceGraph& g) {
  json nodes = json::array();
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto& m = inst.mentions[g.nodes[n]];
    nodes.push_back({{"mention", g.nodes[n]},
                     {"start", m.span_start},
                     {"end", m.span_end},
                     {"chain", m.chain_id},
                     {"kind", to_string(m.kind)}});
  }
  json edges = json::array();
  for (const auto& e : g.edges) {
    if (e.source < e.target) edges.push_back({{"source", e.source}, {"target", e.target}, {"type", to_string(e.type)}});
  }
  const auto d = question_answer_distance(g, inst);
  return {{"id", inst.id}, {"nodes", nodes}, {"edges", edges}, {"distance", d ? json(*d) : json(nullptr)}};
}

json epoch_json(const EpochStats& e) {
  return {{"epoch", e.epoch},
          {"mean_loss", e.mean_loss},
          {"dev_accuracy", e.dev_accuracy},
          {"seconds", e.seconds},
          {"improved", e.improved}};
}

json report_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back(epoch_json(e));
  return {{"epochs", epochs},
          {"used", r.used},
          {"skipped", r.skipped},
          {"best_epoch", r.best_epoch},
          {"best_dev_accuracy", r.best_dev_accuracy},
          {"stopped_early", r.stopped_early},
          {"seconds", r.seconds}};
}

std::string format_double(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based evidence integration for multi-hop reading comprehension"};
  app.require_subcommand(1);
  std::string log_json_path;
  app.add_option("--log-json", log_json_path, "also write structured log events (JSON lines) to this file");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-hop dataset");
  GenConfig gen_config;
  std::string gen_out, gen_split = "train";
  gen->add_option("--hops", gen_config.hops, "facts between subject and answer");
  gen->add_option("--n", gen_config.num_instances, "number of instances");
  gen->add_option("--seed", gen_config.seed, "generator seed");
  gen->add_option("--out", gen_out, "output file (default stdout)");
  gen->add_option("--candidates", gen_config.candidates, "candidates per instance");
  gen->add_option("--entities", gen_config.entities, "entity vocabulary size");
  gen->add_option("--fillers", gen_config.fillers, "filler vocabulary size");
  gen->add_option("--max-filler", gen_config.max_filler, "filler tokens around each fact");
  gen->add_option("--distractor-facts", gen_config.distractor_facts, "facts outside every candidate chain");
  gen->add_option("--min-gap", gen_config.min_gap, "minimum token gap between consecutive facts of a chain");
  gen->add_option("--pronoun-fraction", gen_config.pronoun_fraction, "chains with a trailing pronoun sentence");
  gen->add_option("--alias-fraction", gen_config.alias_fraction, "instances using the alias layout (hops 2)");
  gen->add_option("--id-prefix", gen_config.id_prefix, "instance id prefix");
  gen->add_option("--split", gen_split, "split label: train | dev | test");

  // build-graph
  auto* bg = app.add_subcommand("build-graph", "write the evidence graph of every instance");
  std::string bg_data, bg_out;
  GraphFlags bg_flags;
  bg->add_option("--data", bg_data, "dataset file")->required();
  bg->add_option("--out", bg_out, "graph records, one JSON object per line (default stdout)");
  bg_flags.attach(bg);

  // stats
  auto* st = app.add_subcommand("stats", "edge counts and question-answer distance histogram");
  std::string st_data;
  bool st_json = false;
  GraphFlags st_flags;
  st->add_option("--data", st_data, "dataset file")->required();
  st->add_flag("--json", st_json, "print the report as JSON");
  st_flags.attach(st);

  // train
  auto* tr = app.add_subcommand("train", "train a model, keeping the best dev epoch");
  std::string tr_train, tr_dev, tr_checkpoint, tr_report, tr_embeddings;
  SettingFlags tr_flags;
  tr->add_option("--train", tr_train, "training dataset")->required();
  tr->add_option("--dev", tr_dev, "dev dataset for model selection");
  tr->add_option("--checkpoint", tr_checkpoint, "where to save the trained model");
  tr->add_option("--report", tr_report, "write the training report as JSON");
  tr->add_option("--embeddings", tr_embeddings, "GloVe-style text embeddings");
  tr_flags.attach(tr, true);

  // eval
  auto* ev = app.add_subcommand("eval", "score a dataset with a saved model");
  std::string ev_checkpoint, ev_data, ev_predictions;
  ev->add_option("--checkpoint", ev_checkpoint, "saved model")->required();
  ev->add_option("--data", ev_data, "dataset file")->required();
  ev->add_option("--predictions", ev_predictions, "write {id, probs, argmax} per instance (JSON lines)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every model variant");
  GradCheckSuiteConfig gc_config;
  double gc_tolerance = 1e-4;
  gc->add_option("--seed", gc_config.seed, "seed for instances and parameters");
  gc->add_option("--instances", gc_config.instances, "toy instances per variant");
  gc->add_option("--hidden", gc_config.hidden, "hidden size");
  gc->add_option("--embedding-dim", gc_config.embedding_dim, "embedding size");
  gc->add_option("--eps", gc_config.eps, "finite-difference step");
  gc->add_option("--tolerance", gc_tolerance, "maximum allowed relative error");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train with each edge-type subset and report dev accuracy");
  std::string ab_train, ab_dev, ab_out;
  std::size_t ab_repeats = 1;
  bool ab_baseline = false;
  SettingFlags ab_flags;
  ab->add_option("--train", ab_train, "training dataset")->required();
  ab->add_option("--dev", ab_dev, "dev dataset")->required();
  ab->add_option("--repeats", ab_repeats, "runs per row with seeds derived from --seed; rows report the median")
      ->check(CLI::PositiveNumber);
  ab->add_flag("--baseline", ab_baseline, "add a Local baseline row");
  ab->add_option("--out", ab_out, "write the rows as JSON");
  ab_flags.attach(ab, true);

  for (auto* sub : {gen, bg, st, tr, ev, gc, ab}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kExitUsage;
  }

  std::unique_ptr<std::ofstream> log_json;
  Logger log(&std::cerr, LogLevel::Info);
  try {
    log = Logger(&std::cerr, log_level_from_env());
    if (!log_json_path.empty()) {
      log_json = std::make_unique<std::ofstream>(log_json_path);
      if (!*log_json) throw std::runtime_error("cannot write " + log_json_path);
      log.set_json(log_json.get());
    }

    if (*gen) {
      const Dataset ds = generate(gen_config, parse_split(gen_split));
      OutputFile out(gen_out);
      write_dataset(out.stream(), ds);
      log.info("gen-data", "generated " + std::to_string(ds.size()) + " instances",
               {{"instances", ds.size()}, {"hops", gen_config.hops}, {"seed", gen_config.seed}});
      return 0;
    }

    if (*bg) {
      const Dataset ds = parse_dataset(bg_data, Split::Train);
      const EdgeFilter filter = bg_flags.filter();
      bg_flags.graph.validate();
      OutputFile out(bg_out);
      std::map<EdgeType, std::size_t> totals;
      for (const auto& inst : ds.instances) {
        const EvidenceGraph g = build_capped_graph(inst, bg_flags.graph, filter);
        for (const auto& [t, c] : edge_counts(g)) totals[t] += c;
        out.stream() << graph_record(inst, g).dump() << '\n';
      }
      const DistanceHistogram h = distance_histogram(ds, bg_flags.graph, filter);
      print_histogram(std::cerr, h);
      log.info("build-graph", "wrote " + std::to_string(ds.size()) + " graphs",
               {{"edges", counts_json(totals)}, {"distance", histogram_json(h)}});
      return 0;
    }

    if (*st) {
      const Dataset ds = parse_dataset(st_data, Split::Train);
      const EdgeFilter filter = st_flags.filter();
      st_flags.graph.validate();
      std::map<EdgeType, std::size_t> totals;
      std::size_t nodes = 0;
      for (const auto& inst : ds.instances) {
        const EvidenceGraph g = build_capped_graph(inst, st_flags.graph, filter);
        nodes += g.size();
        for (const auto& [t, c] : edge_counts(g)) totals[t] += c;
      }
      const DistanceHistogram h = distance_histogram(ds, st_flags.graph, filter);
      if (st_json) {
        std::cout << json{{"edges_filter", filter.to_string()},
                          {"instances", ds.size()},
                          {"nodes", nodes},
                          {"edge_counts", counts_json(totals)},
                          {"distance", histogram_json(h)}}
                         .dump(2)
                  << '\n';
      } else {
        std::cout << "edges: " << filter.to_string() << "\ninstances: " << ds.size() << "\nnodes: " << nodes << "\n";
        const json counts = counts_json(totals);
        for (const auto& [name, count] : counts.items()) {
          std::cout << name << " edges: " << count.get<std::size_t>() << "\n";
        }
        print_histogram(std::cout, h);
      }
      return 0;
    }

    if (*tr) {
      const RunSettings s = tr_flags.resolve();
      const Dataset train_set = parse_dataset(tr_train, Split::Train);
      std::optional<Dataset> dev;
      if (!tr_dev.empty()) dev = parse_dataset(tr_dev, Split::Dev);
      const auto vocab = collect_vocabulary({&train_set});
      EmbeddingTable table(vocab, s.model.embedding_dim, s.model.embedding_init, s.model.seed);
      if (!tr_embeddings.empty()) {
        const std::size_t replaced = table.load_text(tr_embeddings);
        log.info("embeddings", "loaded " + std::to_string(replaced) + " embedding rows", {{"rows", replaced}});
      }
      Model model(s.model, std::move(table));
      log.info("train-start", "training " + std::string(to_string(s.model.kind)) + " on " +
                                  std::to_string(train_set.size()) + " instances",
               {{"config", to_json(s.model)}, {"train_instances", train_set.size()}});
      const TrainReport report = train(model, train_set, dev ? &*dev : nullptr, s.train, [&](const EpochStats& e) {
        std::string msg = "epoch " + std::to_string(e.epoch) + " loss " + format_double(e.mean_loss);
        if (e.dev_accuracy >= 0.0) msg += " dev " + format_double(e.dev_accuracy);
        msg += " (" + format_double(e.seconds, 1) + "s)";
        log.info("epoch", msg, epoch_json(e));
      });
      if (report.skipped > 0) {
        log.warn("skipped", std::to_string(report.skipped) + " training instances have no mention linked to the answer",
                 {{"skipped", report.skipped}});
      }
      const json rj = report_json(report);
      log.info("train-done",
               "best dev " + format_double(report.best_dev_accuracy) + " at epoch " + std::to_string(report.best_epoch),
               rj);
      if (!tr_report.empty()) {
        OutputFile out(tr_report);
        out.stream() << rj.dump(2) << '\n';
      }
      if (!tr_checkpoint.empty()) {
        save_model(tr_checkpoint, model, {{"report", rj}});
        log.info("checkpoint", "saved " + tr_checkpoint, {{"path", tr_checkpoint}});
      }
      return 0;
    }

    if (*ev) {
      auto model = load_model(ev_checkpoint);
      const Dataset ds = parse_dataset(ev_data, Split::Dev);
      const auto preds = predict(*model, ds);
      if (!ev_predictions.empty()) {
        OutputFile out(ev_predictions);
        for (const auto& p : preds) {
          out.stream() << json{{"id", p.id}, {"probs", p.probs}, {"argmax", p.argmax}}.dump() << '\n';
        }
      }
      const double acc = accuracy(preds);
      std::cout << "accuracy " << format_double(acc) << " (" << ds.size() << " instances)\n";
      log.info("eval", "accuracy " + format_double(acc), {{"accuracy", acc}, {"instances", ds.size()}});
      return 0;
    }

    if (*gc) {
      const auto cases = run_gradcheck_suite(gc_config, [&](const GradCheckCase& c) {
        log.info("gradcheck", c.variant + " " + c.instance + " max relative error " + std::to_string(c.result.max_relative_error) +
                                  " (" + c.result.worst_parameter + ")",
                 {{"variant", c.variant}, {"instance", c.instance}, {"max_relative_error", c.result.max_relative_error},
                  {"worst_parameter", c.result.worst_parameter}});
      });
      const double worst = worst_error(cases);
      const bool ok = !cases.empty() && worst < gc_tolerance;
      std::cout << (ok ? "PASS" : "FAIL") << " worst relative error " << worst << " over " << cases.size()
                << " checks (tolerance " << gc_tolerance << ")\n";
      return ok ? 0 : kExitRuntime;
    }

    if (*ab) {
      const RunSettings base = ab_flags.resolve();
      if (!uses_graph(base.model.kind)) throw UsageError("ablate needs a graph model");
      if (ab_flags.given("edges")) throw UsageError("ablate chooses the edge types itself; drop --edges");
      const Dataset train_set = parse_dataset(ab_train, Split::Train);
      const Dataset dev = parse_dataset(ab_dev, Split::Dev);

      struct Row {
        std::string name;
        RunSettings settings;
      };
      std::vector<Row> rows;
      for (const auto& r : ablation_rows()) {
        Row row{r.name, base};
        row.settings.model.edges = r.edges;
        rows.push_back(std::move(row));
      }
      if (ab_baseline) {
        Row row{"local", base};
        row.settings.model.kind = ModelKind::Local;
        rows.push_back(std::move(row));
      }

      json out_rows = json::array();
      std::cout << std::left << std::setw(14) << "edges" << "dev accuracy\n";
      for (auto& row : rows) {
        std::vector<double> accs;
        for (std::size_t k = 0; k < ab_repeats; ++k) {
          RunSettings s = row.settings;
          s.set_seed(repeat_seed(base.model.seed, k));
          const RunResult r = run_experiment(s, train_set, dev);
          accs.push_back(r.dev_accuracy);
          log.info("ablate-run", row.name + " seed " + std::to_string(r.seed) + " dev " + format_double(r.dev_accuracy),
                   {{"row", row.name}, {"seed", r.seed}, {"dev_accuracy", r.dev_accuracy}});
        }
        const double med = median(accs);
        std::cout << std::left << std::setw(14) << row.name << format_double(100.0 * med, 1) << "\n" << std::flush;
        out_rows.push_back({{"row", row.name}, {"edges", row.settings.model.edges.to_string()},
                            {"model", to_string(row.settings.model.kind)}, {"accuracies", accs}, {"median", med}});
      }
      if (!ab_out.empty()) {
        OutputFile out(ab_out);
        out.stream() << out_rows.dump(2) << '\n';
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    log.error("failure", e.what());
    return kExitRuntime;
  }
  return 0;
}
