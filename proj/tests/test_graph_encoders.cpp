#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mhqa/graph_encoders.hpp"
#include "oracles.hpp"

using namespace mhqa;

namespace {

using Vec = std::vector<double>;

EvidenceGraph graph_from_pairs(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  EvidenceGraph g;
  g.nodes.resize(n);
  std::iota(g.nodes.begin(), g.nodes.end(), 0);
  g.positions = g.nodes;
  g.adjacency.resize(n);
  for (auto [u, v] : pairs) {
    g.edges.push_back({u, v, EdgeType::Window});
    g.edges.push_back({v, u, EdgeType::Window});
    g.adjacency[u].push_back(v);
    g.adjacency[v].push_back(u);
  }
  for (auto& a : g.adjacency) std::sort(a.begin(), a.end());
  return g;
}

EvidenceGraph random_graph(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (coin(rng)) pairs.emplace_back(u, v);
  return graph_from_pairs(n, pairs);
}

Vec random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void zero(Parameter* p) { std::fill(p->value.values.begin(), p->value.values.end(), 0.0); }

struct Encoder {
  ParameterSet params;
  GraphEncoderConfig config;
  GraphEncoderParams p;
  Encoder(GraphEncoderKind kind, std::size_t steps, std::size_t mention_dim, std::size_t q_dim, std::size_t hidden,
          std::uint64_t seed = 3) {
    config.kind = kind;
    config.steps = steps;
    p = GraphEncoderParams::create(params, config, mention_dim, q_dim, hidden, seed);
  }
};

struct Inputs {
  std::vector<Vec> mentions;
  Vec question;
};

Inputs random_inputs(std::size_t n, std::size_t d, std::size_t q, std::mt19937_64& rng) {
  Inputs in;
  for (std::size_t k = 0; k < n; ++k) in.mentions.push_back(random_vec(d, rng));
  in.question = random_vec(q, rng);
  return in;
}

std::vector<GraphState> run(Tape& tape, Encoder& enc, const EvidenceGraph& g, const Inputs& in) {
  std::vector<Var> reps;
  for (const auto& m : in.mentions) reps.push_back(tape.constant(Tensor::vector(m)));
  return run_graph_encoder(tape, g, reps, tape.constant(Tensor::vector(in.question)), enc.config, enc.p);
}

Vec values(const Var& v) { return v.value().values; }

// Plain-double GRN with separate read and write buffers. W is 4H x H, gates
// stacked input, output, forget, update; sigmoid update activation.
std::vector<Vec> grn_oracle(const EvidenceGraph& g, std::vector<Vec> h, std::size_t steps, const Vec& W,
                            const Vec& b) {
  const std::size_t n = h.size(), H = h.front().size();
  std::vector<Vec> c(n, Vec(H, 0.0));
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<Vec> h_next(n, Vec(H)), c_next(n, Vec(H));
    for (std::size_t k = 0; k < n; ++k) {
      Vec m(H, 0.0);
      for (const auto& e : g.edges)
        if (e.source == k)
          for (std::size_t j = 0; j < H; ++j) m[j] += h[e.target][j];
      Vec z(4 * H);
      for (std::size_t r = 0; r < 4 * H; ++r) {
        z[r] = b[r];
        for (std::size_t j = 0; j < H; ++j) z[r] += W[r * H + j] * m[j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        const double i = oracle::logistic(z[j]), o = oracle::logistic(z[H + j]), f = oracle::logistic(z[2 * H + j]),
                     u = oracle::logistic(z[3 * H + j]);
        c_next[k][j] = f * c[k][j] + i * u;
        h_next[k][j] = o * std::tanh(c_next[k][j]);
      }
    }
    h = std::move(h_next);
    c = std::move(c_next);
  }
  return h;
}

}  // namespace

TEST(StateInit, ZeroInputsAndWeightsGiveBias) {
  Encoder enc(GraphEncoderKind::GRN, 0, 3, 2, 4);
  zero(enc.p.init.W);
  Tape tape;
  const auto states = run(tape, enc, graph_from_pairs(2, {{0, 1}}), Inputs{{Vec(3, 0.0), Vec(3, 0.0)}, Vec(2, 0.0)});
  for (const Var& s : states[0].hidden) EXPECT_EQ(values(s), enc.p.init.b->value.values);
}

TEST(StateInit, OneDimensionalToy) {
  Encoder enc(GraphEncoderKind::GRN, 0, 1, 1, 1);
  enc.p.init.W->value.values = {1.0, 1.0};
  enc.p.init.b->value.values = {0.25};
  Tape tape;
  const auto states = run(tape, enc, graph_from_pairs(1, {}), Inputs{{{0.5}}, {-2.0}});
  EXPECT_DOUBLE_EQ(states[0].hidden[0][0], 0.5 - 2.0 + 0.25);
}

TEST(Message, IsolatedNodeGetsZero) {
  Tape tape;
  GraphState s;
  s.hidden = {tape.constant(Tensor::vector({1.0, 2.0})), tape.constant(Tensor::vector({3.0, 4.0}))};
  const EvidenceGraph g = graph_from_pairs(2, {});
  EXPECT_EQ(values(message(tape, s, g, 0)), (Vec{0.0, 0.0}));
  EXPECT_EQ(values(message(tape, s, g, 0, true)), (Vec{1.0, 2.0}));
}

TEST(Message, SumsNeighborStates) {
  Tape tape;
  GraphState s;
  s.hidden = {tape.constant(Tensor::vector({5.0, 5.0})), tape.constant(Tensor::vector({1.0, 0.0})),
              tape.constant(Tensor::vector({0.0, 1.0}))};
  EXPECT_EQ(values(message(tape, s, graph_from_pairs(3, {{0, 1}, {0, 2}}), 0)), (Vec{1.0, 1.0}));
}

TEST(Message, MatchesEdgeListOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const EvidenceGraph g = random_graph(6, 0.4, rng);
    Tape tape;
    GraphState s;
    std::vector<Vec> hs;
    for (int k = 0; k < 6; ++k) {
      hs.push_back(random_vec(3, rng));
      s.hidden.push_back(tape.constant(Tensor::vector(hs.back())));
    }
    for (std::size_t k = 0; k < 6; ++k) {
      for (bool self : {false, true}) {
        Vec expect = self ? hs[k] : Vec(3, 0.0);
        for (const auto& e : g.edges)
          if (e.source == k)
            for (std::size_t j = 0; j < 3; ++j) expect[j] += hs[e.target][j];
        const Vec got = values(message(tape, s, g, k, self));
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[j], expect[j], 1e-15);
      }
    }
  }
}

TEST(GrnStep, ZeroMessageValue) {
  Encoder enc(GraphEncoderKind::GRN, 1, 2, 2, 3);
  zero(enc.p.grn[0].W);
  zero(enc.p.grn[0].b);
  std::mt19937_64 rng(1);
  Tape tape;
  const auto states = run(tape, enc, graph_from_pairs(2, {}), random_inputs(2, 2, 2, rng));
  // i = o = f = u = 1/2, c = 1/4.
  for (const Var& s : states[1].hidden)
    for (double v : values(s)) EXPECT_NEAR(v, 0.5 * std::tanh(0.25), 1e-15);
  EXPECT_NEAR(0.5 * std::tanh(0.25), 0.12245, 1e-5);
}

TEST(GcnStep, ZeroMessageValueAndDiffersFromGrn) {
  std::mt19937_64 rng(2);
  const Inputs in = random_inputs(3, 2, 2, rng);
  const EvidenceGraph g = graph_from_pairs(3, {{0, 1}, {1, 2}});
  Encoder gcn(GraphEncoderKind::GCN, 1, 2, 2, 3);
  Encoder grn(GraphEncoderKind::GRN, 1, 2, 2, 3);
  Tape tape;
  const Vec a = values(run(tape, gcn, g, in)[1].hidden[1]);
  const Vec b = values(run(tape, grn, g, in)[1].hidden[1]);
  EXPECT_NE(a, b);

  zero(gcn.p.gcn[0].W);
  zero(gcn.p.gcn[0].b);
  Tape fresh;  // a tape snapshots parameter values on first use
  const auto isolated = run(fresh, gcn, graph_from_pairs(3, {}), in);
  for (const Var& s : isolated[1].hidden) EXPECT_EQ(values(s), Vec(3, 0.5));
}

TEST(GrnStep, TwoNodeExchangeByHand) {
  Encoder enc(GraphEncoderKind::GRN, 1, 1, 1, 1);
  enc.p.init.W->value.values = {1.0, 0.0};
  enc.p.init.b->value.values = {0.0};
  enc.p.grn[0].W->value.values = {0.5, -0.4, 0.3, 0.9};
  enc.p.grn[0].b->value.values = {0.1, 0.2, -0.3, 0.0};
  Tape tape;
  const auto states = run(tape, enc, graph_from_pairs(2, {{0, 1}}), Inputs{{{0.7}, {-1.1}}, {0.0}});
  using oracle::logistic;
  const auto step = [](double m) {
    const double c = logistic(0.5 * m + 0.1) * logistic(0.9 * m);
    return logistic(-0.4 * m + 0.2) * std::tanh(c);
  };
  EXPECT_NEAR(states[1].hidden[0][0], step(-1.1), 1e-15);
  EXPECT_NEAR(states[1].hidden[1][0], step(0.7), 1e-15);
}

TEST(GraphEncoder, ZeroStepsReturnsInitialStates) {
  std::mt19937_64 rng(6);
  const Inputs in = random_inputs(4, 3, 2, rng);
  Encoder enc(GraphEncoderKind::GRN, 0, 3, 2, 5);
  Tape tape;
  const auto states = run(tape, enc, random_graph(4, 0.5, rng), in);
  ASSERT_EQ(states.size(), 1u);
  const Vec& W = enc.p.init.W->value.values;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t r = 0; r < 5; ++r) {
      double expect = enc.p.init.b->value.values[r];
      for (std::size_t j = 0; j < 3; ++j) expect += W[r * 5 + j] * in.mentions[k][j];
      for (std::size_t j = 0; j < 2; ++j) expect += W[r * 5 + 3 + j] * in.question[j];
      EXPECT_NEAR(states[0].hidden[k][r], expect, 1e-15);
    }
  }
}

TEST(GraphEncoder, MatchesTwoBufferOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const EvidenceGraph g = random_graph(7, 0.3, rng);
    const Inputs in = random_inputs(7, 3, 2, rng);
    Encoder enc(GraphEncoderKind::GRN, 3, 3, 2, 4, trial);
    Tape tape;
    const auto states = run(tape, enc, g, in);
    std::vector<Vec> h0;
    for (const Var& s : states[0].hidden) h0.push_back(values(s));
    const auto expect = grn_oracle(g, h0, 3, enc.p.grn[0].W->value.values, enc.p.grn[0].b->value.values);
    for (std::size_t k = 0; k < 7; ++k)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(states[3].hidden[k][j], expect[k][j], 1e-12);
  }
}

TEST(GraphEncoder, UnsharedParametersPerStep) {
  Encoder enc(GraphEncoderKind::GCN, 1, 2, 2, 3);
  GraphEncoderConfig config = enc.config;
  config.steps = 3;
  config.shared_params = false;
  ParameterSet params;
  const GraphEncoderParams p = GraphEncoderParams::create(params, config, 2, 2, 3, 1);
  EXPECT_EQ(p.gcn.size(), 3u);
  EXPECT_NE(params.find("gcn.t3.W"), nullptr);
}

TEST(GraphEncoder, RejectsGraphOfWrongSize) {
  std::mt19937_64 rng(1);
  Encoder enc(GraphEncoderKind::GRN, 1, 2, 2, 3);
  Tape tape;
  EXPECT_THROW(run(tape, enc, graph_from_pairs(3, {}), random_inputs(2, 2, 2, rng)), ShapeError);
}

TEST(GraphEncoderProperty, PermutationEquivariance) {
  std::mt19937_64 rng(10);
  for (auto kind : {GraphEncoderKind::GRN, GraphEncoderKind::GCN}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 6;
      const EvidenceGraph g = random_graph(n, 0.4, rng);
      const Inputs in = random_inputs(n, 2, 2, rng);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      // Node k of the original becomes node perm[k].
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& e : g.edges)
        if (e.source < e.target) pairs.emplace_back(perm[e.source], perm[e.target]);
      Inputs permuted = in;
      for (std::size_t k = 0; k < n; ++k) permuted.mentions[perm[k]] = in.mentions[k];
      Encoder enc(kind, 3, 2, 2, 3);
      Tape tape;
      const auto a = run(tape, enc, g, in);
      const auto b = run(tape, enc, graph_from_pairs(n, pairs), permuted);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a[3].hidden[k][j], b[3].hidden[perm[k]][j], 1e-12);
    }
  }
}

TEST(GraphEncoderProperty, InformationTravelsOneHopPerStep) {
  // Path 0 - 1 - 2 - 3 - 4 - 5; perturb node 0.
  const std::size_t n = 6;
  std::vector<std::pair<std::size_t, std::size_t>> path;
  for (std::size_t k = 0; k + 1 < n; ++k) path.emplace_back(k, k + 1);
  const EvidenceGraph g = graph_from_pairs(n, path);
  std::mt19937_64 rng(12);
  Inputs in = random_inputs(n, 2, 2, rng);
  for (auto kind : {GraphEncoderKind::GRN, GraphEncoderKind::GCN}) {
    Encoder enc(kind, 4, 2, 2, 3);
    Tape tape;
    const auto a = run(tape, enc, g, in);
    Inputs moved = in;
    moved.mentions[0][0] += 0.3;
    const auto b = run(tape, enc, g, moved);
    for (std::size_t t = 0; t <= 4; ++t) {
      for (std::size_t k = 0; k < n; ++k) {
        // Nodes more than t hops away cannot have heard of the change; the
        // node exactly t hops away must have.
        if (k > t) EXPECT_EQ(values(a[t].hidden[k]), values(b[t].hidden[k])) << "step " << t << " node " << k;
        if (k == t) EXPECT_NE(values(a[t].hidden[k]), values(b[t].hidden[k])) << "step " << t << " node " << k;
      }
    }
  }
}

TEST(GraphEncoderProperty, NegativeForgetBiasDropsOldCell) {
  std::mt19937_64 rng(14);
  const EvidenceGraph g = random_graph(5, 0.5, rng);
  const Inputs in = random_inputs(5, 2, 2, rng);
  Encoder enc(GraphEncoderKind::GRN, 1, 2, 2, 3);
  for (std::size_t r = 6; r < 9; ++r) enc.p.grn[0].b->value.values[r] = -50.0;
  Tape tape;
  const auto states = run(tape, enc, g, in);
  GraphState reset = states[1];
  for (auto& c : reset.cell) c = tape.constant(Tensor(Shape{3}));
  const GraphState with_cell = grn_step(tape, states[1], g, enc.p.grn[0]);
  const GraphState without = grn_step(tape, reset, g, enc.p.grn[0]);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(with_cell.hidden[k][j], without.hidden[k][j], 1e-15);
}

TEST(GraphEncoder, GradientCheck) {
  const EvidenceGraph triangle = graph_from_pairs(3, {{0, 1}, {1, 2}, {0, 2}});
  std::mt19937_64 rng(16);
  const Inputs in = random_inputs(3, 2, 2, rng);
  for (auto kind : {GraphEncoderKind::GRN, GraphEncoderKind::GCN}) {
    Encoder enc(kind, 2, 2, 2, 3);
    const auto fn = [&](Tape& tape) {
      const auto states = run(tape, enc, triangle, in);
      std::vector<Var> parts;
      for (std::size_t k = 0; k < 3; ++k) parts.push_back(scale(sum(states[2].hidden[k]), 1.0 + k));
      return sum_n(parts);
    };
    const auto ps = enc.params.trainable();
    EXPECT_LT(grad_check(fn, ps, 1e-2, Difference::Richardson).max_relative_error, 1e-6);
  }
}
