#include <random>

#include <gtest/gtest.h>

#include "mhqa/graph.hpp"
#include "mhqa/synth.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mhqa;
using mhqa::testing::hanging_gardens;
using mhqa::testing::make_instance;

namespace {

bool has_edge(const EvidenceGraph& g, std::size_t u, std::size_t v, EdgeType t) {
  for (const auto& e : g.edges) {
    if (e.source == u && e.target == v && e.type == t) return true;
  }
  return false;
}

}  // namespace

TEST(GraphBuilder, HangingGardensEdges) {
  const Instance inst = hanging_gardens();
  const EvidenceGraph g = build_graph(inst, GraphConfig{});
  // Mention indices: 0 Hanging Gardens, 1 Mumbai(p0), 2 Mumbai(p1), 3 Maharashtra,
  // 4 It, 5 India(p1), 6 Arabian Sea, 7 Pakistan, 8 Iran, 9 Somalia, 10 India(p2).
  EXPECT_TRUE(has_edge(g, 1, 2, EdgeType::Same));
  EXPECT_TRUE(has_edge(g, 5, 10, EdgeType::Same));
  EXPECT_TRUE(has_edge(g, 0, 1, EdgeType::Window));
  EXPECT_TRUE(has_edge(g, 4, 2, EdgeType::Coref));
  EXPECT_FALSE(has_edge(g, 4, 2, EdgeType::Window)) << "same chain is not a different entity";
  const auto counts = edge_counts(g);
  EXPECT_EQ(counts.at(EdgeType::Same), 4u);
  EXPECT_EQ(counts.at(EdgeType::Coref), 2u);
  // passage 0: 1 pair; passage 1: 5 pairs (all but Mumbai-It); passage 2: 10 pairs.
  EXPECT_EQ(counts.at(EdgeType::Window), 2u * 16u);
}

TEST(GraphBuilder, HangingGardensDistances) {
  const Instance inst = hanging_gardens();
  // Gardens -> Mumbai (window) -> Mumbai (same) -> India (window).
  EXPECT_EQ(question_answer_distance(build_graph(inst, GraphConfig{}), inst), 3u);
  EXPECT_FALSE(question_answer_distance(build_graph(inst, GraphConfig{}, EdgeFilter::only(EdgeType::Coref)), inst));
}

TEST(GraphBuilder, SingleMentionHasNoEdges) {
  const Instance inst = make_instance({{"a", "b"}}, {{0, 0, "x"}}, {"a"});
  const EvidenceGraph g = build_graph(inst, GraphConfig{});
  EXPECT_EQ(g.size(), 1u);
  EXPECT_TRUE(g.edges.empty());
}

TEST(GraphBuilder, AdjacentSubjectAndAnswerAreOneHopApart) {
  const Instance inst = make_instance({{"Ann", "met", "Bob"}}, {{0, 0, "s"}, {2, 2, "b"}}, {"Bob"}, 0, "s");
  EXPECT_EQ(question_answer_distance(build_graph(inst, GraphConfig{}), inst), 1u);
}

TEST(GraphBuilder, SameRuleUsesStrictLongThreshold) {
  // Same passage, starts 5 apart.
  const Instance inst = make_instance({{"Ann", "a", "b", "c", "d", "ann"}}, {{0, 0, "x"}, {5, 5, "y"}}, {"Ann"});
  GraphConfig config{5, 2, 200};
  EXPECT_FALSE(has_edge(build_graph(inst, config), 0, 1, EdgeType::Same));
  config.tau_long = 4;
  EXPECT_TRUE(has_edge(build_graph(inst, config), 0, 1, EdgeType::Same));
}

TEST(GraphBuilder, CorefCoversAliasesAndPronouns) {
  const Instance inst =
      make_instance({{"Bombay", "is", "Mumbai", "it", "Mumbai"}},
                    {{0, 0, "m"}, {2, 2, "m"}, {3, 3, "m", true}, {4, 4, "m"}}, {"Mumbai"});
  const EvidenceGraph g = build_graph(inst, GraphConfig{}, EdgeFilter::only(EdgeType::Coref));
  // Mentions: 0 Bombay, 1 Mumbai, 2 it, 3 Mumbai.
  EXPECT_TRUE(has_edge(g, 0, 1, EdgeType::Coref)) << "different strings on one chain";
  EXPECT_TRUE(has_edge(g, 2, 3, EdgeType::Coref)) << "pronoun pairs";
  EXPECT_FALSE(has_edge(g, 1, 3, EdgeType::Coref)) << "equal strings are left to the Same rule";
}

TEST(GraphBuilder, InvalidConfigThrows) {
  const Instance inst = hanging_gardens();
  EXPECT_THROW(build_graph(inst, GraphConfig{20, 20, 200}), std::invalid_argument);
  EXPECT_THROW(build_graph(inst, GraphConfig{200, 20, 0}), std::invalid_argument);
}

TEST(GraphBuilder, MatchesAllPairsOracle) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    const Instance inst = oracle::random_small_instance(rng);
    const GraphConfig config{static_cast<std::size_t>(4 + trial % 7), static_cast<std::size_t>(1 + trial % 3), 200};
    for (const EdgeFilter f : {EdgeFilter::all(), EdgeFilter::only(EdgeType::Coref), EdgeFilter::without(EdgeType::Same)}) {
      const EvidenceGraph g = build_graph(inst, config, f);
      ASSERT_EQ(oracle::edge_set(g), oracle::all_pairs_edges(inst, config, f)) << "trial " << trial;
      EXPECT_EQ(question_answer_distance(g, inst), oracle::floyd_distance(inst, oracle::edge_set(g))) << "trial " << trial;
    }
  }
}

TEST(CapNeighbors, KeepsSameAndCorefBeforeNearestWindow) {
  // Node 0 ("X" at 0) has Window neighbors at 3, 5, 8, 12, 15 and Same
  // neighbors "X" at 21 and 26 in the second passage.
  const Instance inst = make_instance(
      {{"X", "-", "-", "a", "-", "b", "-", "-", "c", "-", "-", "-", "d", "-", "-", "e", "-", "."},
       {"-", "-", "-", "X", "-", "-", "-", "-", "X"}},
      {{0, 0, "x"}, {3, 3, "a"}, {5, 5, "b"}, {8, 8, "c"}, {12, 12, "d"}, {15, 15, "e"}, {21, 21, "x1"}, {26, 26, "x2"}},
      {"X"});
  GraphConfig config;
  config.neighbor_cap = 4;
  const EvidenceGraph g = build_capped_graph(inst, config);
  EXPECT_EQ(g.adjacency[0], (std::vector<std::size_t>{6, 7, 1, 2}));
}

TEST(CapNeighbors, UnderCapUnchangedAndIdempotent) {
  const Instance inst = hanging_gardens();
  const EvidenceGraph g = build_graph(inst, GraphConfig{});
  const EvidenceGraph capped = cap_neighbors(g, GraphConfig{});
  EXPECT_EQ(capped.adjacency, g.adjacency);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance r = oracle::random_small_instance(rng);
    const GraphConfig config{8, 4, static_cast<std::size_t>(1 + trial % 4)};
    const EvidenceGraph once = build_capped_graph(r, config);
    const EvidenceGraph twice = cap_neighbors(once, config);
    EXPECT_EQ(once.adjacency, twice.adjacency);
    for (const auto& list : once.adjacency) EXPECT_LE(list.size(), config.neighbor_cap);
  }
}

TEST(GraphProperty, SymmetricAndWithoutSelfLoops) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance inst = oracle::random_small_instance(rng);
    const EvidenceGraph g = build_graph(inst, GraphConfig{6, 3, 200});
    const auto edges = oracle::edge_set(g);
    for (const auto& [u, v, t] : edges) {
      EXPECT_NE(u, v);
      EXPECT_TRUE(edges.count({v, u, t}));
    }
  }
}

TEST(GraphProperty, ThresholdMonotonicity) {
  std::mt19937_64 rng(9);
  const auto count = [](const EvidenceGraph& g, EdgeType t) { return edge_counts(g).at(t); };
  for (int trial = 0; trial < 100; ++trial) {
    const Instance inst = oracle::random_small_instance(rng);
    const auto small_window = oracle::edge_set(build_graph(inst, GraphConfig{30, 2, 200}, EdgeFilter::only(EdgeType::Window)));
    const auto large_window = oracle::edge_set(build_graph(inst, GraphConfig{30, 6, 200}, EdgeFilter::only(EdgeType::Window)));
    for (const auto& e : small_window) EXPECT_TRUE(large_window.count(e));
    EXPECT_GE(count(build_graph(inst, GraphConfig{4, 2, 200}), EdgeType::Same),
              count(build_graph(inst, GraphConfig{9, 2, 200}), EdgeType::Same));
  }
}

TEST(GraphProperty, MoreEdgeTypesNeverLengthenDistance) {
  std::mt19937_64 rng(13);
  const std::vector<EdgeFilter> subsets{EdgeFilter::none(), EdgeFilter::only(EdgeType::Same),
                                        EdgeFilter::only(EdgeType::Coref), EdgeFilter::only(EdgeType::Window),
                                        EdgeFilter::without(EdgeType::Same), EdgeFilter::without(EdgeType::Coref),
                                        EdgeFilter::without(EdgeType::Window)};
  for (int trial = 0; trial < 200; ++trial) {
    const Instance inst = oracle::random_small_instance(rng);
    const GraphConfig config{6, 3, 200};
    const auto full = question_answer_distance(build_graph(inst, config), inst);
    for (const auto& f : subsets) {
      const auto part = question_answer_distance(build_graph(inst, config, f), inst);
      if (part) {
        ASSERT_TRUE(full.has_value());
        EXPECT_LE(*full, *part);
      }
    }
  }
}

TEST(DistanceHistogram, SingleInstanceAndNormalization) {
  const Instance inst = make_instance({{"Ann", "met", "x", "Bob"}}, {{0, 0, "s"}, {2, 2, "m"}, {3, 3, "b"}}, {"Bob"}, 0, "s");
  const Dataset one{{inst}, Split::Dev};
  // Window edges join every pair within 20 tokens, so the answer is one hop away.
  const auto h = distance_histogram(one, GraphConfig{}, EdgeFilter::all());
  EXPECT_EQ(h.fraction(1), 1.0);
  EXPECT_EQ(h.unreachable, 0.0);

  GenConfig g;
  g.num_instances = 60;
  g.hops = 2;
  const Dataset ds = generate(g);
  for (const auto& f : {EdgeFilter::all(), EdgeFilter::only(EdgeType::Coref)}) {
    const auto hist = distance_histogram(ds, GraphConfig{}, f);
    double total = hist.unreachable;
    for (const auto& [hops, frac] : hist.finite) total += frac;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(DistanceHistogram, SyntheticMassAtDesignedHopCount) {
  for (std::size_t hops : {1, 2, 3}) {
    GenConfig g;
    g.num_instances = 80;
    g.hops = hops;
    const Dataset ds = generate(g);
    const auto h = distance_histogram(ds, GraphConfig{}, EdgeFilter::all());
    EXPECT_EQ(h.fraction(2 * hops - 1), 1.0) << "hops " << hops;
  }
}

TEST(EdgeFilter, ParseAndPrint) {
  EXPECT_EQ(EdgeFilter::parse("same,coref"), EdgeFilter::without(EdgeType::Window));
  EXPECT_EQ(EdgeFilter::parse("all"), EdgeFilter::all());
  EXPECT_EQ(EdgeFilter::parse("none"), EdgeFilter::none());
  EXPECT_EQ(EdgeFilter::parse(""), EdgeFilter::none());
  EXPECT_EQ(EdgeFilter::without(EdgeType::Coref).to_string(), "same,window");
  EXPECT_THROW(EdgeFilter::parse("same,bridge"), std::invalid_argument);
}
