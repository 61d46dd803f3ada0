#pragma once

// Answer normalization, exact match and token F1 with the semantics of the
// official SQuAD v2 evaluation script.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <unicode/uchar.h>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/text.hpp"

namespace mrcdpo::metrics {

/// Any Unicode P* character, plus the ASCII symbols in Python's
/// string.punctuation that Unicode files under S* ($ + < = > ^ ` | ~).
inline bool is_punctuation(char32_t c) {
  if (c < 0x80 && std::string_view("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~").find(static_cast<char>(c)) !=
                      std::string_view::npos)
    return true;
  switch (u_charType(static_cast<UChar32>(c))) {
    case U_DASH_PUNCTUATION:
    case U_START_PUNCTUATION:
    case U_END_PUNCTUATION:
    case U_CONNECTOR_PUNCTUATION:
    case U_OTHER_PUNCTUATION:
    case U_INITIAL_PUNCTUATION:
    case U_FINAL_PUNCTUATION:
      return true;
    default:
      return false;
  }
}

/// Python's regex \w: letters, numbers, underscore.
inline bool is_word_char(char32_t c) {
  if (c == U'_') return true;
  const auto mask = U_GET_GC_MASK(static_cast<UChar32>(c));
  return (mask & (U_GC_L_MASK | U_GC_N_MASK)) != 0;
}

namespace detail {

inline bool is_article_at(const std::u32string& s, std::size_t i, std::size_t len) {
  const bool left_ok = i == 0 || !is_word_char(s[i - 1]);
  const bool right_ok = i + len == s.size() || !is_word_char(s[i + len]);
  return left_ok && right_ok;
}

}  // namespace detail

/// lower -> strip punctuation -> drop whole-word a/an/the -> collapse
/// whitespace. Same order as the SQuAD script.
inline std::string normalize(std::string_view input) {
  std::u32string s;
  for (char32_t c : text::decode(text::lower(input)))
    if (!is_punctuation(c)) s.push_back(c);

  std::u32string no_articles;
  no_articles.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    std::size_t matched = 0;
    if (s.compare(i, 3, U"the") == 0 && detail::is_article_at(s, i, 3)) matched = 3;
    else if (s.compare(i, 2, U"an") == 0 && detail::is_article_at(s, i, 2)) matched = 2;
    else if (s[i] == U'a' && detail::is_article_at(s, i, 1)) matched = 1;
    if (matched) {
      no_articles.push_back(U' ');
      i += matched;
    } else {
      no_articles.push_back(s[i++]);
    }
  }

  std::u32string out;
  bool pending_space = false;
  for (char32_t c : no_articles) {
    if (text::is_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(U' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return text::encode(out);
}

inline std::vector<std::string> normalized_tokens(std::string_view s) {
  if (s.empty()) return {};
  return text::split(normalize(s));
}

inline bool exact_match(std::string_view prediction, std::string_view gold) {
  return normalize(prediction) == normalize(gold);
}

inline double token_f1(std::string_view prediction, std::string_view gold) {
  auto pred = normalized_tokens(prediction);
  auto ref = normalized_tokens(gold);
  if (pred.empty() || ref.empty()) return pred == ref ? 1.0 : 0.0;
  std::sort(pred.begin(), pred.end());
  std::sort(ref.begin(), ref.end());
  std::size_t common = 0;
  for (std::size_t i = 0, j = 0; i < pred.size() && j < ref.size();) {
    if (pred[i] == ref[j]) {
      ++common, ++i, ++j;
    } else if (pred[i] < ref[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct PairScore {
  bool em = false;
  double f1 = 0.0;
  bool operator==(const PairScore&) const = default;
};

/// Best score over a record's golds. Golds that normalize to "" are
/// ignored; if none remain the gold is the empty string.
inline PairScore score_against_golds(std::string_view prediction, const QaRecord& record) {
  std::vector<std::string_view> golds;
  for (const auto& g : record.gold_answers)
    if (!normalize(g.text).empty()) golds.push_back(g.text);
  if (golds.empty()) golds.push_back("");
  PairScore best;
  for (auto g : golds) {
    best.em = best.em || exact_match(prediction, g);
    best.f1 = std::max(best.f1, token_f1(prediction, g));
  }
  return best;
}

struct EvalReport {
  double em = 0.0;  // percent
  double f1 = 0.0;  // percent
  std::map<std::string, PairScore> per_question;
};

inline EvalReport evaluate(const std::unordered_map<std::string, std::string>& predictions,
                           const Corpus& corpus) {
  EvalReport report;
  if (corpus.empty()) return report;
  double em_sum = 0.0, f1_sum = 0.0;
  for (const auto& r : corpus.records) {
    auto it = predictions.find(r.id);
    if (it == predictions.end()) throw ValidationError("missing prediction for id '" + r.id + "'");
    const PairScore s = score_against_golds(it->second, r);
    em_sum += s.em ? 1.0 : 0.0;
    f1_sum += s.f1;
    report.per_question.emplace(r.id, s);
  }
  const auto n = static_cast<double>(corpus.size());
  report.em = 100.0 * em_sum / n;
  report.f1 = 100.0 * f1_sum / n;
  return report;
}

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

inline json report_to_json(const EvalReport& report) {
  json per = json::object();
  for (const auto& [id, s] : report.per_question) per[id] = {{"em", s.em}, {"f1", s.f1}};
  return {{"exact", round2(report.em)},
          {"f1", round2(report.f1)},
          {"total", report.per_question.size()},
          {"per_question", std::move(per)}};
}

}  // namespace mrcdpo::metrics
