#pragma once

// Typed evidence graph over mention nodes.
//
// Edge rules for a mention pair (u, v), u != v, token distance measured
// between span starts:
//   Same    both entity mentions, equal normalized surface, and either in
//           different passages or more than tau_long tokens apart.
//   Coref   same chain, and at least one is a pronoun or the surfaces differ
//           (aliases on one annotator chain).
//   Window  different chains, same passage, at most tau_window tokens apart.
// Every qualifying pair yields both directed edges; a pair qualifying under
// several rules gets one edge per rule.

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "mhqa/data_model.hpp"

namespace mhqa {

struct GraphConfig {
  std::size_t tau_long = 200;
  std::size_t tau_window = 20;
  std::size_t neighbor_cap = 200;

  void validate() const {
    if (tau_long == 0 || tau_window == 0 || neighbor_cap == 0) {
      throw std::invalid_argument("graph thresholds and neighbor cap must be positive");
    }
    if (tau_window >= tau_long) throw std::invalid_argument("tau_window must be smaller than tau_long");
  }
};

enum class EdgeType { Same = 0, Coref = 1, Window = 2 };

inline std::string_view to_string(EdgeType t) {
  switch (t) {
    case EdgeType::Same: return "same";
    case EdgeType::Coref: return "coref";
    case EdgeType::Window: return "window";
  }
  return "?";
}

/// Subset of edge types.
struct EdgeFilter {
  bool same = true;
  bool coref = true;
  bool window = true;

  static EdgeFilter all() { return {}; }
  static EdgeFilter none() { return {false, false, false}; }
  static EdgeFilter only(EdgeType t) {
    EdgeFilter f = none();
    f.set(t, true);
    return f;
  }
  static EdgeFilter without(EdgeType t) {
    EdgeFilter f;
    f.set(t, false);
    return f;
  }

  bool contains(EdgeType t) const {
    switch (t) {
      case EdgeType::Same: return same;
      case EdgeType::Coref: return coref;
      case EdgeType::Window: return window;
    }
    return false;
  }

  void set(EdgeType t, bool on) {
    switch (t) {
      case EdgeType::Same: same = on; break;
      case EdgeType::Coref: coref = on; break;
      case EdgeType::Window: window = on; break;
    }
  }

  /// Comma-separated list of type names, e.g. "same,coref". "none" or "" is the empty set.
  static EdgeFilter parse(std::string_view text) {
    EdgeFilter f = none();
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string_view::npos) comma = text.size();
      std::string_view item = text.substr(pos, comma - pos);
      if (item == "same") {
        f.same = true;
      } else if (item == "coref") {
        f.coref = true;
      } else if (item == "window") {
        f.window = true;
      } else if (item == "all") {
        f = all();
      } else if (!item.empty() && item != "none") {
        throw std::invalid_argument("unknown edge type '" + std::string(item) + "'");
      }
      pos = comma + 1;
    }
    return f;
  }

  std::string to_string() const {
    std::string s;
    for (EdgeType t : {EdgeType::Same, EdgeType::Coref, EdgeType::Window}) {
      if (!contains(t)) continue;
      if (!s.empty()) s += ',';
      s += mhqa::to_string(t);
    }
    return s.empty() ? "none" : s;
  }

  friend bool operator==(const EdgeFilter&, const EdgeFilter&) = default;
};

struct Edge {
  std::size_t source = 0;
  std::size_t target = 0;
  EdgeType type = EdgeType::Same;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct EvidenceGraph {
  std::vector<std::size_t> nodes;      // mention index per node
  std::vector<std::size_t> positions;  // span start per node
  std::vector<Edge> edges;             // sorted, both directions present before filtering
  std::vector<std::vector<std::size_t>> adjacency;

  std::size_t size() const { return nodes.size(); }

  std::size_t distance(std::size_t u, std::size_t v) const {
    return positions[u] > positions[v] ? positions[u] - positions[v] : positions[v] - positions[u];
  }
};

namespace detail {

inline int neighbor_priority(EdgeType t) { return t == EdgeType::Window ? 1 : 0; }

/// Neighbor lists ordered by (priority class, token distance, node index).
inline std::vector<std::vector<std::size_t>> ordered_adjacency(const EvidenceGraph& g) {
  std::vector<std::map<std::size_t, int>> best(g.size());
  for (const Edge& e : g.edges) {
    const int p = neighbor_priority(e.type);
    auto [it, inserted] = best[e.source].emplace(e.target, p);
    if (!inserted) it->second = std::min(it->second, p);
  }
  std::vector<std::vector<std::size_t>> adj(g.size());
  for (std::size_t u = 0; u < g.size(); ++u) {
    std::vector<std::tuple<int, std::size_t, std::size_t>> order;
    order.reserve(best[u].size());
    for (const auto& [v, p] : best[u]) order.emplace_back(p, g.distance(u, v), v);
    std::sort(order.begin(), order.end());
    adj[u].reserve(order.size());
    for (const auto& item : order) adj[u].push_back(std::get<2>(item));
  }
  return adj;
}

}  // namespace detail

/// Builds the uncapped graph restricted to the edge types in `filter`.
inline EvidenceGraph build_graph(const Instance& inst, const GraphConfig& config,
                                 EdgeFilter filter = EdgeFilter::all()) {
  config.validate();
  const auto& ms = inst.mentions;
  const std::size_t n = ms.size();
  EvidenceGraph g;
  g.nodes.resize(n);
  g.positions.resize(n);
  std::vector<std::string> surface(n);
  std::vector<std::size_t> passage(n);
  for (std::size_t k = 0; k < n; ++k) {
    g.nodes[k] = k;
    g.positions[k] = ms[k].span_start;
    surface[k] = normalize_surface(inst.surface(ms[k]));
    passage[k] = inst.context.passage_of(ms[k].span_start);
  }
  const auto emit = [&](std::size_t u, std::size_t v, EdgeType t) {
    g.edges.push_back({u, v, t});
    g.edges.push_back({v, u, t});
  };

  if (filter.same) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < n; ++k) {
      if (!ms[k].is_pronoun()) groups[surface[k]].push_back(k);
    }
    for (const auto& [key, members] : groups) {
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          const std::size_t u = members[a], v = members[b];
          if (passage[u] != passage[v] || g.distance(u, v) > config.tau_long) emit(u, v, EdgeType::Same);
        }
    }
  }

  if (filter.coref) {
    std::map<std::string, std::vector<std::size_t>> chains;
    for (std::size_t k = 0; k < n; ++k) chains[ms[k].chain_id].push_back(k);
    for (const auto& [chain, members] : chains) {
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          const std::size_t u = members[a], v = members[b];
          if (ms[u].is_pronoun() || ms[v].is_pronoun() || surface[u] != surface[v]) emit(u, v, EdgeType::Coref);
        }
    }
  }

  if (filter.window) {
    // Per passage, sweep mentions in start order and pair those within the window.
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(passage[a], g.positions[a], a) < std::tie(passage[b], g.positions[b], b);
    });
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t u = order[i];
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::size_t v = order[j];
        if (passage[v] != passage[u] || g.positions[v] - g.positions[u] > config.tau_window) break;
        if (ms[u].chain_id != ms[v].chain_id) emit(u, v, EdgeType::Window);
      }
    }
  }

  std::sort(g.edges.begin(), g.edges.end());
  g.adjacency = detail::ordered_adjacency(g);
  return g;
}

/// Keeps at most neighbor_cap neighbors per node: Same and Coref neighbors
/// first, then Window, each class by ascending token distance then node index.
inline EvidenceGraph cap_neighbors(EvidenceGraph g, const GraphConfig& config) {
  g.adjacency = detail::ordered_adjacency(g);
  for (auto& list : g.adjacency) {
    if (list.size() > config.neighbor_cap) list.resize(config.neighbor_cap);
  }
  return g;
}

inline EvidenceGraph build_capped_graph(const Instance& inst, const GraphConfig& config,
                                        EdgeFilter filter = EdgeFilter::all()) {
  return cap_neighbors(build_graph(inst, config, filter), config);
}

/// Edge counts per type (directed edges).
inline std::map<EdgeType, std::size_t> edge_counts(const EvidenceGraph& g) {
  std::map<EdgeType, std::size_t> counts{{EdgeType::Same, 0}, {EdgeType::Coref, 0}, {EdgeType::Window, 0}};
  for (const Edge& e : g.edges) ++counts[e.type];
  return counts;
}

// ---------------------------------------------------------------------------
// Hop-distance analytics.

/// Fewest untyped, undirected hops from any mention on the question subject's
/// chain to any mention linked to the answer; nullopt when unreachable.
inline std::optional<std::size_t> question_answer_distance(const EvidenceGraph& g, const Instance& inst) {
  const CandidateLinks links = link_candidates(inst);
  std::vector<std::vector<std::size_t>> undirected(g.size());
  for (const Edge& e : g.edges) {
    undirected[e.source].push_back(e.target);
    undirected[e.target].push_back(e.source);
  }
  constexpr std::size_t kUnseen = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(g.size(), kUnseen);
  std::deque<std::size_t> frontier;
  for (std::size_t u = 0; u < g.size(); ++u) {
    if (inst.mentions[g.nodes[u]].chain_id == inst.subject_chain_id) {
      dist[u] = 0;
      frontier.push_back(u);
    }
  }
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop_front();
    const auto& link = links[g.nodes[u]];
    if (link && *link == inst.answer_index) return dist[u];
    for (std::size_t v : undirected[u]) {
      if (dist[v] == kUnseen) {
        dist[v] = dist[u] + 1;
        frontier.push_back(v);
      }
    }
  }
  return std::nullopt;
}

struct DistanceHistogram {
  std::map<std::size_t, double> finite;  // hop count -> fraction of instances
  double unreachable = 0.0;
  std::size_t instances = 0;

  double fraction(std::size_t hops) const {
    auto it = finite.find(hops);
    return it == finite.end() ? 0.0 : it->second;
  }
};

inline DistanceHistogram distance_histogram(const Dataset& ds, const GraphConfig& config, EdgeFilter filter) {
  DistanceHistogram h;
  h.instances = ds.size();
  if (ds.instances.empty()) return h;
  std::map<std::size_t, std::size_t> counts;
  std::size_t unreachable = 0;
  for (const auto& inst : ds.instances) {
    const auto d = question_answer_distance(build_graph(inst, config, filter), inst);
    if (d) {
      ++counts[*d];
    } else {
      ++unreachable;
    }
  }
  const double total = static_cast<double>(ds.size());
  for (const auto& [hops, c] : counts) h.finite[hops] = static_cast<double>(c) / total;
  h.unreachable = static_cast<double>(unreachable) / total;
  return h;
}

}  // namespace mhqa
