#pragma once

// Seeded generator of small multi-hop reading datasets.
//
// Each instance has `candidates` fact chains over distinct entities
//   head --r--> x1 --part-of--> x2 ... --part-of--> tail
// and the question is [head-of-chain-0, "rel<r>"]. Every chain uses a
// different relation, so only the chain whose first fact carries the asked
// relation leads to the answer. Templates (one sentence each):
//   first fact     <head> <relation words> <x1> .
//   later facts    <x_j> is part of <x_j+1> .
//   pronoun        it is big .              (refers to the tail)
// Relation words: "is located in", "is near", "was founded by", "is owned by",
// then "is r<k> of" for k >= 4. Entities are e0..e<entities-1>, fillers
// f0..f<fillers-1>, aliases a0.. (one per entity).
//
// Layouts:
//   split  every fact in its own passage; question-answer distance 2*hops-1.
//   alias  hops must be 2: the first fact names the tail by its alias, and the
//          tail appears in a second passage ("<x1> is part of <tail> ."). Alias
//          and tail share one coreference chain, so the distance is 2.
// Chain ids are per (entity, passage) except alias chains, which span passages.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mhqa/data_model.hpp"

namespace mhqa {

struct GenConfig {
  std::uint64_t seed = 7;
  std::size_t num_instances = 100;
  std::size_t hops = 2;
  std::size_t candidates = 4;
  std::size_t entities = 40;        // entity vocabulary size
  std::size_t fillers = 12;         // filler vocabulary size
  std::size_t max_filler = 2;       // filler tokens before and after each fact
  std::size_t distractor_facts = 0; // extra facts over entities outside every chain
  std::size_t min_gap = 0;          // minimum token gap between consecutive facts of a chain
  double pronoun_fraction = 0.5;    // chains that get a pronoun sentence after the tail
  double alias_fraction = 0.0;      // instances rendered with the alias layout
  std::string id_prefix = "syn";

  /// Entities consumed per instance.
  std::size_t entities_needed() const { return candidates * (hops + 1) + 2 * distractor_facts; }

  void validate() const {
    if (hops < 1) throw std::invalid_argument("hops must be at least 1");
    if (candidates < 2) throw std::invalid_argument("candidate count must be at least 2");
    if (entities_needed() > entities) {
      throw std::invalid_argument("infeasible config: " + std::to_string(entities_needed()) +
                                  " entities needed per instance but vocabulary has " + std::to_string(entities));
    }
    if (fillers == 0 && max_filler > 0) throw std::invalid_argument("filler vocabulary is empty");
    if (pronoun_fraction < 0.0 || pronoun_fraction > 1.0) throw std::invalid_argument("pronoun fraction must be in [0,1]");
    if (alias_fraction < 0.0 || alias_fraction > 1.0) throw std::invalid_argument("alias fraction must be in [0,1]");
    if (alias_fraction > 0.0 && hops != 2) throw std::invalid_argument("alias layout needs hops == 2");
  }
};

inline std::vector<std::string> relation_words(std::size_t r) {
  switch (r) {
    case 0: return {"is", "located", "in"};
    case 1: return {"is", "near"};
    case 2: return {"was", "founded", "by"};
    case 3: return {"is", "owned", "by"};
    default: return {"is", "r" + std::to_string(r), "of"};
  }
}

/// Ground truth for one chain of the generated instance.
struct GeneratedChain {
  std::vector<std::size_t> entities;  // head .. tail
  std::size_t relation = 0;
};

namespace detail {

struct DraftMention {
  std::size_t offset;  // within the passage
  std::size_t length;
  std::string chain;   // empty: derive from entity and passage
  std::size_t entity;
  MentionKind kind;
};

struct DraftPassage {
  std::vector<std::string> tokens;
  std::vector<DraftMention> mentions;
  std::size_t chain = SIZE_MAX;  // owning fact chain, SIZE_MAX for distractors
  std::size_t fact = 0;          // position of the fact along its chain
};

inline std::string entity_name(std::size_t e) { return "e" + std::to_string(e); }
inline std::string alias_name(std::size_t e) { return "a" + std::to_string(e); }

class Drafter {
 public:
  Drafter(const GenConfig& config, std::mt19937_64& rng) : config_(config), rng_(rng) {}

  void fill(DraftPassage& p) {
    if (config_.max_filler == 0) return;
    std::uniform_int_distribution<std::size_t> count(0, config_.max_filler);
    std::uniform_int_distribution<std::size_t> word(0, config_.fillers - 1);
    for (std::size_t n = count(rng_); n > 0; --n) p.tokens.push_back("f" + std::to_string(word(rng_)));
  }

  void entity(DraftPassage& p, std::size_t e, std::string chain = {}) {
    p.mentions.push_back({p.tokens.size(), 1, std::move(chain), e, MentionKind::Entity});
    p.tokens.push_back(entity_name(e));
  }

  void alias(DraftPassage& p, std::size_t e, const std::string& chain) {
    p.mentions.push_back({p.tokens.size(), 1, chain, e, MentionKind::Entity});
    p.tokens.push_back(alias_name(e));
  }

  void words(DraftPassage& p, const std::vector<std::string>& ws) { p.tokens.insert(p.tokens.end(), ws.begin(), ws.end()); }

  void pronoun(DraftPassage& p, std::size_t e, std::string chain = {}) {
    p.mentions.push_back({p.tokens.size(), 1, std::move(chain), e, MentionKind::Pronoun});
    p.tokens.push_back("it");
    words(p, {"is", "big", "."});
  }

 private:
  const GenConfig& config_;
  std::mt19937_64& rng_;
};

/// Token gap between the last mention of fact j and the first mention of fact j+1.
inline bool gaps_ok(const std::vector<DraftPassage>& ps, const std::vector<std::size_t>& order, std::size_t min_gap) {
  if (min_gap == 0) return true;
  std::vector<std::size_t> start(ps.size());
  std::size_t offset = 0;
  for (std::size_t i : order) {
    start[i] = offset;
    offset += ps[i].tokens.size();
  }
  for (std::size_t a = 0; a < ps.size(); ++a) {
    for (std::size_t b = 0; b < ps.size(); ++b) {
      if (ps[a].chain == SIZE_MAX || ps[a].chain != ps[b].chain || ps[b].fact != ps[a].fact + 1) continue;
      const std::size_t from = start[a] + ps[a].mentions.back().offset;
      const std::size_t to = start[b] + ps[b].mentions.front().offset;
      const std::size_t gap = from > to ? from - to : to - from;
      if (gap <= min_gap) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Generates one instance. `alias` selects the alias layout.
inline Instance generate_instance(const GenConfig& config, std::mt19937_64& rng, bool alias, std::string id,
                                  std::vector<GeneratedChain>* truth = nullptr) {
  std::vector<std::size_t> pool(config.entities);
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t next = 0;

  std::vector<std::size_t> relations(std::max<std::size_t>(config.candidates, 4));
  std::iota(relations.begin(), relations.end(), 0);
  std::shuffle(relations.begin(), relations.end(), rng);

  std::vector<GeneratedChain> chains(config.candidates);
  for (auto& c : chains) {
    c.entities.assign(pool.begin() + static_cast<std::ptrdiff_t>(next),
                      pool.begin() + static_cast<std::ptrdiff_t>(next + config.hops + 1));
    next += config.hops + 1;
  }
  for (std::size_t c = 0; c < chains.size(); ++c) chains[c].relation = relations[c];

  std::bernoulli_distribution with_pronoun(config.pronoun_fraction);
  detail::Drafter d(config, rng);
  std::vector<detail::DraftPassage> passages;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& es = chains[c].entities;
    const std::size_t tail = es.back();
    const std::string tail_chain = alias ? "alias." + detail::entity_name(tail) : std::string();

    detail::DraftPassage first;
    first.chain = c;
    d.fill(first);
    d.entity(first, es[0]);
    d.words(first, relation_words(chains[c].relation));
    if (alias) {
      d.alias(first, tail, tail_chain);
    } else {
      d.entity(first, es[1]);
    }
    d.words(first, {"."});
    if (config.hops == 1 && with_pronoun(rng)) d.pronoun(first, tail);
    d.fill(first);
    passages.push_back(std::move(first));

    for (std::size_t j = 1; j < config.hops; ++j) {
      detail::DraftPassage p;
      p.chain = c;
      p.fact = j;
      d.fill(p);
      d.entity(p, es[j]);
      d.words(p, {"is", "part", "of"});
      d.entity(p, es[j + 1], j + 1 == config.hops ? tail_chain : std::string());
      d.words(p, {"."});
      if (j + 1 == config.hops && with_pronoun(rng)) d.pronoun(p, tail, tail_chain);
      d.fill(p);
      passages.push_back(std::move(p));
    }
  }
  for (std::size_t k = 0; k < config.distractor_facts; ++k) {
    detail::DraftPassage p;
    d.fill(p);
    d.entity(p, pool[next++]);
    d.words(p, {"is", "part", "of"});
    d.entity(p, pool[next++]);
    d.words(p, {"."});
    d.fill(p);
    passages.push_back(std::move(p));
  }

  std::vector<std::size_t> order(passages.size());
  std::iota(order.begin(), order.end(), 0);
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    std::shuffle(order.begin(), order.end(), rng);
    placed = detail::gaps_ok(passages, order, config.min_gap);
  }
  if (!placed) {
    // Separate every pair of passages with a filler-only passage long enough for the gap.
    std::vector<std::size_t> spaced;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k > 0) {
        detail::DraftPassage pad;
        for (std::size_t n = 0; n <= config.min_gap; ++n) pad.tokens.push_back("f0");
        passages.push_back(std::move(pad));
        spaced.push_back(passages.size() - 1);
      }
      spaced.push_back(order[k]);
    }
    order = std::move(spaced);
  }

  Instance inst;
  inst.id = std::move(id);
  std::size_t offset = 0;
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const auto& p = passages[order[slot]];
    for (const auto& m : p.mentions) {
      MentionAnnotation a;
      a.span_start = offset + m.offset;
      a.span_end = a.span_start + m.length - 1;
      a.chain_id = m.chain.empty() ? detail::entity_name(m.entity) + "@" + std::to_string(slot) : m.chain;
      a.kind = m.kind;
      inst.mentions.push_back(std::move(a));
    }
    inst.passages.push_back(p.tokens);
    offset += p.tokens.size();
  }

  const std::size_t subject = chains[0].entities[0];
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const auto& p = passages[order[slot]];
    if (p.chain == 0 && p.fact == 0) inst.subject_chain_id = detail::entity_name(subject) + "@" + std::to_string(slot);
  }
  inst.question.tokens = {detail::entity_name(subject), "rel" + std::to_string(chains[0].relation)};

  std::vector<std::size_t> cand_order(chains.size());
  std::iota(cand_order.begin(), cand_order.end(), 0);
  std::shuffle(cand_order.begin(), cand_order.end(), rng);
  for (std::size_t k = 0; k < cand_order.size(); ++k) {
    inst.candidates.push_back(detail::entity_name(chains[cand_order[k]].entities.back()));
    if (cand_order[k] == 0) inst.answer_index = k;
  }
  inst.gold_distance = alias ? 2 : static_cast<int>(2 * config.hops - 1);
  inst.finalize();
  if (truth) *truth = std::move(chains);
  return inst;
}

/// Deterministic in the config: instance i draws from its own generator.
inline Dataset generate(const GenConfig& config, Split split = Split::Train) {
  config.validate();
  Dataset ds;
  ds.split = split;
  ds.instances.reserve(config.num_instances);
  for (std::size_t i = 0; i < config.num_instances; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::mt19937_64 rng(seq);
    const bool alias = config.alias_fraction > 0.0 && std::bernoulli_distribution(config.alias_fraction)(rng);
    ds.instances.push_back(generate_instance(config, rng, alias, config.id_prefix + "-" + std::to_string(i)));
  }
  return ds;
}

/// Follows the written facts from the question subject: the relation named in
/// the question selects the first fact, then "part of" facts are chased,
/// resolving aliases through coreference chains. Returns the candidate index.
inline std::optional<std::size_t> symbolic_answer(const Instance& inst) {
  const auto& toks = inst.context.tokens;
  if (inst.question.tokens.size() != 2) return std::nullopt;
  const std::string& subject = inst.question.tokens[0];
  const std::size_t relation = std::stoul(inst.question.tokens[1].substr(3));
  const auto words = relation_words(relation);

  const auto mention_at = [&](std::size_t pos) -> const MentionAnnotation* {
    for (const auto& m : inst.mentions) {
      if (m.span_start == pos) return &m;
    }
    return nullptr;
  };
  const auto resolve = [&](std::size_t pos) -> std::string {
    const MentionAnnotation* m = mention_at(pos);
    if (!m) return toks[pos];
    if (toks[pos][0] != 'a') return toks[pos];
    for (const auto& other : inst.mentions) {
      if (other.chain_id == m->chain_id && !other.is_pronoun() && toks[other.span_start][0] == 'e') {
        return toks[other.span_start];
      }
    }
    return toks[pos];
  };

  std::optional<std::string> current;
  for (std::size_t i = 0; i + words.size() + 1 < toks.size(); ++i) {
    if (toks[i] != subject) continue;
    if (!std::equal(words.begin(), words.end(), toks.begin() + static_cast<std::ptrdiff_t>(i + 1))) continue;
    current = resolve(i + words.size() + 1);
    break;
  }
  if (!current) return std::nullopt;
  for (bool moved = true; moved;) {
    moved = false;
    for (std::size_t i = 0; i + 4 < toks.size(); ++i) {
      if (toks[i] == *current && toks[i + 1] == "is" && toks[i + 2] == "part" && toks[i + 3] == "of") {
        current = toks[i + 4];
        moved = true;
        break;
      }
    }
  }
  for (std::size_t c = 0; c < inst.candidates.size(); ++c) {
    if (inst.candidates[c] == *current) return c;
  }
  return std::nullopt;
}

}  // namespace mhqa
