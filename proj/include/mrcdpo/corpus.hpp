#pragma once

// SQuAD v2 corpus ingestion, validation, canonical re-serialization,
// prompt rendering and context-level splitting.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mrcdpo/errors.hpp"
#include "mrcdpo/rng.hpp"
#include "mrcdpo/text.hpp"

namespace mrcdpo {

using json = nlohmann::json;

struct GoldAnswer {
  std::string text;
  std::size_t answer_start = 0;  // code points, as in SQuAD files
  std::size_t byte_start = 0;    // same offset in UTF-8 bytes

  std::size_t byte_end() const { return byte_start + text.size(); }
  bool operator==(const GoldAnswer&) const = default;
};

struct QaRecord {
  std::string id;
  std::string context;
  std::string question;
  std::vector<GoldAnswer> gold_answers;
  bool is_answerable = false;

  /// Canonical positive: first gold text, or "" for no-answer questions.
  const std::string& chosen() const {
    static const std::string kEmpty;
    return gold_answers.empty() ? kEmpty : gold_answers.front().text;
  }

  bool operator==(const QaRecord&) const = default;
};

enum class Split { train, dev, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split label '" + std::string(s) + "'");
}

struct Corpus {
  std::vector<QaRecord> records;
  Split split = Split::train;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  const QaRecord* find(std::string_view id) const {
    for (const auto& r : records)
      if (r.id == id) return &r;
    return nullptr;
  }

  bool operator==(const Corpus&) const = default;
};

/// The rendered model input. Holds exactly one " <SEP> " separator when
/// neither context nor question contains the marker.
struct Prompt {
  std::string text;
  bool operator==(const Prompt&) const = default;
};

inline constexpr std::string_view kContextPrefix = "context: ";
inline constexpr std::string_view kQuestionInfix = " <SEP> question: ";

inline Prompt render_prompt(std::string_view context, std::string_view question) {
  std::string out;
  out.reserve(kContextPrefix.size() + context.size() + kQuestionInfix.size() + question.size());
  out.append(kContextPrefix).append(context).append(kQuestionInfix).append(question);
  return {std::move(out)};
}

inline Prompt render_prompt(const QaRecord& record) {
  return render_prompt(record.context, record.question);
}

/// Inverse of render_prompt. The last separator wins, so contexts may
/// contain the marker as long as questions do not.
inline std::pair<std::string, std::string> parse_prompt(std::string_view prompt) {
  if (!prompt.starts_with(kContextPrefix))
    throw ValidationError("prompt does not start with 'context: '");
  const auto sep = prompt.rfind(kQuestionInfix);
  if (sep == std::string_view::npos || sep < kContextPrefix.size())
    throw ValidationError("prompt has no '<SEP> question:' separator");
  return {std::string(prompt.substr(kContextPrefix.size(), sep - kContextPrefix.size())),
          std::string(prompt.substr(sep + kQuestionInfix.size()))};
}

/// Checks every QaRecord invariant; throws ValidationError naming the record.
inline void validate_record(const QaRecord& r) {
  if (r.id.empty()) throw ValidationError("record with empty id");
  if (r.is_answerable == r.gold_answers.empty())
    throw ValidationError("record '" + r.id + "': answerable flag disagrees with gold answers");
  for (const auto& g : r.gold_answers) {
    if (g.byte_end() > r.context.size() ||
        std::string_view(r.context).substr(g.byte_start, g.text.size()) != g.text)
      throw ValidationError("offset mismatch in record '" + r.id + "': answer '" + g.text +
                            "' not found at answer_start " + std::to_string(g.answer_start));
    if (g.text.empty())
      throw ValidationError("record '" + r.id + "': empty gold answer text");
  }
}

inline void validate_corpus(const Corpus& c) {
  std::set<std::string_view> seen;
  for (const auto& r : c.records) {
    validate_record(r);
    if (!seen.insert(r.id).second) throw ValidationError("duplicate id '" + r.id + "'");
  }
}

/// Parses SQuAD v1/v2 JSON. Records keep file order.
inline Corpus parse_corpus(const json& doc, Split split = Split::train) {
  Corpus corpus;
  corpus.split = split;
  try {
    for (const auto& article : doc.at("data")) {
      for (const auto& para : article.at("paragraphs")) {
        const std::string context = para.at("context").get<std::string>();
        for (const auto& qa : para.at("qas")) {
          QaRecord r;
          r.id = qa.at("id").is_string() ? qa.at("id").get<std::string>() : qa.at("id").dump();
          r.context = context;
          r.question = qa.at("question").get<std::string>();
          const bool impossible = qa.value("is_impossible", false);
          if (!impossible && qa.contains("answers")) {
            for (const auto& a : qa.at("answers")) {
              GoldAnswer g;
              g.text = a.at("text").get<std::string>();
              g.answer_start = a.at("answer_start").get<std::size_t>();
              try {
                g.byte_start = text::byte_offset_of(context, g.answer_start);
              } catch (const std::out_of_range&) {
                throw ValidationError("offset mismatch in record '" + r.id +
                                      "': answer_start past end of context");
              }
              r.gold_answers.push_back(std::move(g));
            }
          }
          r.is_answerable = !r.gold_answers.empty();
          corpus.records.push_back(std::move(r));
        }
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed SQuAD JSON: ") + e.what());
  }
  validate_corpus(corpus);
  return corpus;
}

inline Corpus load_corpus(const std::string& path, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("parse failure in '" + path + "': " + e.what());
  }
  return parse_corpus(doc, split);
}

/// SQuAD v2 form in record order; consecutive records that share a
/// context are grouped into one paragraph, so load(serialize(c)) == c.
inline json corpus_to_json(const Corpus& corpus) {
  json paragraphs = json::array();
  for (const QaRecord& rec : corpus.records) {
    const QaRecord* r = &rec;
    if (paragraphs.empty() || paragraphs.back()["context"] != r->context)
      paragraphs.push_back({{"context", r->context}, {"qas", json::array()}});
    json answers = json::array();
    for (const auto& g : r->gold_answers)
      answers.push_back({{"text", g.text}, {"answer_start", g.answer_start}});
    paragraphs.back()["qas"].push_back({{"id", r->id},
                                        {"question", r->question},
                                        {"answers", std::move(answers)},
                                        {"is_impossible", !r->is_answerable}});
  }
  return {{"version", "v2.0"},
          {"data", json::array({{{"title", std::string(to_string(corpus.split))},
                                 {"paragraphs", std::move(paragraphs)}}})}};
}

inline std::string serialize_corpus(const Corpus& corpus) {
  return corpus_to_json(corpus).dump(1) + "\n";
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  out << serialize_corpus(corpus);
}

/// Distinct contexts in order of first appearance.
inline std::vector<std::string_view> distinct_contexts(const Corpus& corpus) {
  std::vector<std::string_view> out;
  std::set<std::string_view> seen;
  for (const auto& r : corpus.records)
    if (seen.insert(r.context).second) out.push_back(r.context);
  return out;
}

/// Other records of the corpus sharing `record`'s context, in corpus order.
inline std::vector<const QaRecord*> siblings_of(const Corpus& corpus, const QaRecord& record) {
  std::vector<const QaRecord*> out;
  for (const auto& r : corpus.records)
    if (&r != &record && r.context == record.context && r.id != record.id) out.push_back(&r);
  return out;
}

/// Groups records by context once; use for corpus-wide sibling lookups.
class SiblingIndex {
 public:
  explicit SiblingIndex(const Corpus& corpus) {
    for (const auto& r : corpus.records) groups_[r.context].push_back(&r);
  }

  std::vector<const QaRecord*> of(const QaRecord& record) const {
    std::vector<const QaRecord*> out;
    auto it = groups_.find(record.context);
    if (it == groups_.end()) return out;
    for (const QaRecord* r : it->second)
      if (r->id != record.id) out.push_back(r);
    return out;
  }

 private:
  std::unordered_map<std::string_view, std::vector<const QaRecord*>> groups_;
};

/// Partitions by context: every question of a context lands in the same
/// half. Half A gets floor(n/2) contexts chosen by a seeded shuffle.
inline std::pair<Corpus, Corpus> split_contexts(const Corpus& corpus, uint64_t seed) {
  auto contexts = distinct_contexts(corpus);
  if (contexts.size() < 2)
    throw ValidationError("split_contexts needs at least 2 distinct contexts, got " +
                          std::to_string(contexts.size()));
  Rng rng(derive_seed(seed, "split_contexts"));
  rng.shuffle(std::span(contexts));
  std::set<std::string_view> in_a(contexts.begin(), contexts.begin() + contexts.size() / 2);

  Corpus a, b;
  a.split = b.split = corpus.split;
  for (const auto& r : corpus.records) (in_a.count(r.context) ? a : b).records.push_back(r);
  return {std::move(a), std::move(b)};
}

}  // namespace mrcdpo
