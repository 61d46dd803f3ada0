#pragma once

// Preference pairs (prompt, chosen, rejected) and their JSONL form.

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"

namespace mrcdpo {

struct PreferencePair {
  std::string id;  // id of the QaRecord the pair was forged from
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string source;  // "rule:<name>" or "model:<run>"
  double f1_rejected_vs_gold = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

inline PreferencePair make_preference_pair(const QaRecord& record, std::string rejected, std::string source) {
  PreferencePair p;
  p.id = record.id;
  p.prompt = render_prompt(record).text;
  p.chosen = record.chosen();
  p.f1_rejected_vs_gold = metrics::token_f1(rejected, p.chosen);
  p.rejected = std::move(rejected);
  p.source = std::move(source);
  return p;
}

/// Output order of every pair file: id, then rejected text.
inline void sort_pairs(std::vector<PreferencePair>& pairs) {
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.id, a.rejected) < std::tie(b.id, b.rejected);
  });
}

/// Keeps the first pair for each (prompt, rejected); order preserved.
inline std::vector<PreferencePair> dedup_pairs(std::vector<PreferencePair> pairs) {
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<PreferencePair> out;
  out.reserve(pairs.size());
  for (auto& p : pairs)
    if (seen.emplace(p.prompt, p.rejected).second) out.push_back(std::move(p));
  return out;
}

inline json pair_to_json(const PreferencePair& p) {
  return {{"id", p.id},
          {"prompt", p.prompt},
          {"chosen", p.chosen},
          {"rejected", p.rejected},
          {"source", p.source},
          {"f1_rejected_vs_gold", p.f1_rejected_vs_gold}};
}

inline PreferencePair pair_from_json(const json& j) {
  PreferencePair p;
  p.id = j.at("id").get<std::string>();
  p.prompt = j.at("prompt").get<std::string>();
  p.chosen = j.at("chosen").get<std::string>();
  p.rejected = j.at("rejected").get<std::string>();
  p.source = j.at("source").get<std::string>();
  p.f1_rejected_vs_gold = j.at("f1_rejected_vs_gold").get<double>();
  return p;
}

template <typename T, typename ToJson>
std::string to_jsonl(const std::vector<T>& items, ToJson&& to_json) {
  std::string out;
  for (const auto& item : items) out += to_json(item).dump() + "\n";
  return out;
}

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  out << content;
}

inline std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs) {
  return to_jsonl(pairs, pair_to_json);
}

inline std::vector<PreferencePair> load_pairs(const std::string& path) {
  std::vector<PreferencePair> pairs;
  for (const auto& row : read_jsonl(path)) {
    try {
      pairs.push_back(pair_from_json(row));
    } catch (const json::exception& e) {
      throw ValidationError(path + ": malformed preference pair: " + e.what());
    }
  }
  return pairs;
}

}  // namespace mrcdpo
