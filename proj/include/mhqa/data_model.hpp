#pragma once

// Instance schema and the line-delimited JSON dataset format.
//
// One record per line:
//   {"id": "...",                      optional
//    "question": ["tok", ...],
//    "subject_chain": "chain-id",
//    "passages": [["tok", ...], ...],
//    "mentions": [{"start": 0, "end": 1, "chain": "c", "kind": "entity"|"pronoun"}, ...],
//    "candidates": ["...", ...],
//    "answer": 0,
//    "gold_distance": 3}               optional, written by the synthetic generator
// Mention offsets are global over the concatenation of `passages` in order.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mhqa {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<std::size_t> passage_boundaries{0};

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  /// Index of the passage containing token `pos`.
  std::size_t passage_of(std::size_t pos) const {
    auto it = std::upper_bound(passage_boundaries.begin(), passage_boundaries.end(), pos);
    return static_cast<std::size_t>(it - passage_boundaries.begin()) - 1;
  }

  std::size_t passage_end(std::size_t passage) const {
    return passage + 1 < passage_boundaries.size() ? passage_boundaries[passage + 1] : tokens.size();
  }

  void validate() const {
    if (passage_boundaries.empty() || passage_boundaries.front() != 0) {
      throw ParseError("passage boundaries must start at 0");
    }
    for (std::size_t i = 0; i < passage_boundaries.size(); ++i) {
      if (passage_boundaries[i] >= tokens.size()) throw ParseError("passage boundary beyond token count (empty passage?)");
      if (i && passage_boundaries[i] <= passage_boundaries[i - 1]) {
        throw ParseError("passage boundaries must be strictly increasing");
      }
    }
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Joins passages into one sequence, recording where each passage starts.
inline TokenSequence concatenate(const std::vector<std::vector<std::string>>& passages) {
  TokenSequence out;
  out.passage_boundaries.clear();
  for (const auto& p : passages) {
    out.passage_boundaries.push_back(out.tokens.size());
    out.tokens.insert(out.tokens.end(), p.begin(), p.end());
  }
  return out;
}

enum class MentionKind { Entity, Pronoun };

inline std::string_view to_string(MentionKind k) { return k == MentionKind::Entity ? "entity" : "pronoun"; }

struct MentionAnnotation {
  std::size_t span_start = 0;  // inclusive
  std::size_t span_end = 0;    // inclusive
  std::string chain_id;
  MentionKind kind = MentionKind::Entity;

  bool is_pronoun() const { return kind == MentionKind::Pronoun; }

  friend bool operator==(const MentionAnnotation&, const MentionAnnotation&) = default;
};

struct Instance {
  std::string id;
  TokenSequence question;
  std::string subject_chain_id;
  std::vector<std::vector<std::string>> passages;
  std::vector<MentionAnnotation> mentions;
  std::vector<std::string> candidates;
  std::size_t answer_index = 0;
  std::optional<int> gold_distance;

  /// Concatenated passages; filled by finalize().
  TokenSequence context;

  /// Builds the concatenated context and checks every invariant.
  void finalize();

  std::string surface(const MentionAnnotation& m) const {
    std::string s;
    for (std::size_t i = m.span_start; i <= m.span_end; ++i) {
      if (i > m.span_start) s += ' ';
      s += context.tokens[i];
    }
    return s;
  }

  friend bool operator==(const Instance& a, const Instance& b) {
    return a.id == b.id && a.question == b.question && a.subject_chain_id == b.subject_chain_id &&
           a.passages == b.passages && a.mentions == b.mentions && a.candidates == b.candidates &&
           a.answer_index == b.answer_index && a.gold_distance == b.gold_distance;
  }
};

enum class Split { Train, Dev, Test };

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

struct Dataset {
  std::vector<Instance> instances;
  Split split = Split::Train;

  std::size_t size() const { return instances.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Case-folds (ASCII) and collapses runs of whitespace to one space.
inline std::string normalize_surface(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

inline void Instance::finalize() {
  if (question.empty()) throw ParseError("empty question");
  question.passage_boundaries = {0};
  if (passages.empty()) throw ParseError("instance has no passages");
  context = concatenate(passages);
  context.validate();
  if (candidates.empty()) throw ParseError("instance has no candidates");
  if (answer_index >= candidates.size()) {
    throw ParseError("answer index " + std::to_string(answer_index) + " out of range for " +
                     std::to_string(candidates.size()) + " candidates");
  }
  std::map<std::pair<std::size_t, std::size_t>, const std::string*> spans;
  for (const auto& m : mentions) {
    if (m.span_start > m.span_end || m.span_end >= context.size()) {
      throw ParseError("mention span [" + std::to_string(m.span_start) + ", " + std::to_string(m.span_end) +
                       "] out of range for " + std::to_string(context.size()) + " tokens");
    }
    if (m.is_pronoun() && m.span_start != m.span_end) throw ParseError("pronoun mention spans more than one token");
    if (context.passage_of(m.span_start) != context.passage_of(m.span_end)) {
      throw ParseError("mention crosses a passage boundary");
    }
    if (m.chain_id.empty()) throw ParseError("mention without chain id");
    auto [it, inserted] = spans.emplace(std::pair{m.span_start, m.span_end}, &m.chain_id);
    if (!inserted && *it->second != m.chain_id) {
      throw ParseError("identical mention spans with conflicting chains '" + *it->second + "' and '" +
                       m.chain_id + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// JSON mapping.

inline nlohmann::json to_json(const Instance& inst) {
  nlohmann::json j;
  if (!inst.id.empty()) j["id"] = inst.id;
  j["question"] = inst.question.tokens;
  j["subject_chain"] = inst.subject_chain_id;
  j["passages"] = inst.passages;
  auto& ms = j["mentions"] = nlohmann::json::array();
  for (const auto& m : inst.mentions) {
    ms.push_back({{"start", m.span_start}, {"end", m.span_end}, {"chain", m.chain_id}, {"kind", to_string(m.kind)}});
  }
  j["candidates"] = inst.candidates;
  j["answer"] = inst.answer_index;
  if (inst.gold_distance) j["gold_distance"] = *inst.gold_distance;
  return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  try {
    if (!j.is_object()) throw ParseError("record is not an object");
    if (j.contains("id")) inst.id = j.at("id").get<std::string>();
    inst.question.tokens = j.at("question").get<std::vector<std::string>>();
    inst.subject_chain_id = j.at("subject_chain").get<std::string>();
    inst.passages = j.at("passages").get<std::vector<std::vector<std::string>>>();
    for (const auto& m : j.at("mentions")) {
      MentionAnnotation a;
      const auto start = m.at("start").get<long long>();
      const auto end = m.at("end").get<long long>();
      if (start < 0 || end < 0) throw ParseError("negative mention offset");
      a.span_start = static_cast<std::size_t>(start);
      a.span_end = static_cast<std::size_t>(end);
      a.chain_id = m.at("chain").get<std::string>();
      const auto kind = m.at("kind").get<std::string>();
      if (kind == "entity") {
        a.kind = MentionKind::Entity;
      } else if (kind == "pronoun") {
        a.kind = MentionKind::Pronoun;
      } else {
        throw ParseError("unknown mention kind '" + kind + "'");
      }
      inst.mentions.push_back(std::move(a));
    }
    inst.candidates = j.at("candidates").get<std::vector<std::string>>();
    const auto answer = j.at("answer").get<long long>();
    if (answer < 0) throw ParseError("answer index " + std::to_string(answer) + " out of range");
    inst.answer_index = static_cast<std::size_t>(answer);
    if (j.contains("gold_distance")) inst.gold_distance = j.at("gold_distance").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
  inst.finalize();
  return inst;
}

inline Dataset parse_dataset_stream(std::istream& in, Split split) {
  Dataset ds;
  ds.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ds.instances.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.instances.empty()) throw ParseError("empty dataset");
  return ds;
}

inline Dataset parse_dataset(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  return parse_dataset_stream(in, split);
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  for (const auto& inst : ds.instances) out << to_json(inst).dump() << '\n';
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  write_dataset(out, ds);
}

// ---------------------------------------------------------------------------
// Candidate linking.

/// Per-mention candidate index, or nullopt when the mention links to none.
using CandidateLinks = std::vector<std::optional<std::size_t>>;

/// Entity mentions link by normalized exact string match (first candidate wins
/// on duplicate normalized candidates). Pronouns inherit the candidate of the
/// entity mentions on their chain when that candidate is unique.
inline CandidateLinks link_candidates(const Instance& inst) {
  std::map<std::string, std::size_t> by_surface;
  for (std::size_t c = 0; c < inst.candidates.size(); ++c) {
    by_surface.emplace(normalize_surface(inst.candidates[c]), c);
  }
  CandidateLinks links(inst.mentions.size());
  std::map<std::string, std::set<std::size_t>> chain_candidates;
  for (std::size_t k = 0; k < inst.mentions.size(); ++k) {
    const auto& m = inst.mentions[k];
    if (m.is_pronoun()) continue;
    if (auto it = by_surface.find(normalize_surface(inst.surface(m))); it != by_surface.end()) {
      links[k] = it->second;
      chain_candidates[m.chain_id].insert(it->second);
    }
  }
  for (std::size_t k = 0; k < inst.mentions.size(); ++k) {
    const auto& m = inst.mentions[k];
    if (!m.is_pronoun()) continue;
    if (auto it = chain_candidates.find(m.chain_id); it != chain_candidates.end() && it->second.size() == 1) {
      links[k] = *it->second.begin();
    }
  }
  return links;
}

}  // namespace mhqa
