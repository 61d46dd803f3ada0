#pragma once

// Rule-based negatives: corrupt a gold (context, question, answer) tuple
// into a plausible wrong answer. Spans are whitespace-token runs of the raw
// context so every rejected answer is a reproducible context substring.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"
#include "mrcdpo/pairs.hpp"
#include "mrcdpo/rng.hpp"
#include "mrcdpo/text.hpp"

namespace mrcdpo::rules {

/// A rule's precondition does not hold for this record.
class RuleNotApplicable : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct RuleConfig {
  int negatives_per_tuple = 2;
  int max_random_span_tokens = 12;
  int max_extension_tokens = 5;
  int global_cap = 4000;
  uint64_t seed = 0;

  void validate() const {
    if (negatives_per_tuple < 1 || max_random_span_tokens < 1 || max_extension_tokens < 1 ||
        global_cap < 1)
      throw ValidationError("rule config bounds must be positive");
  }
};

enum class Side { left, right };

inline constexpr std::string_view kRandomSpan = "rule:random_span";
inline constexpr std::string_view kPartialOverlapLeft = "rule:partial_overlap_left";
inline constexpr std::string_view kPartialOverlapRight = "rule:partial_overlap_right";
inline constexpr std::string_view kLongerAnswer = "rule:longer_answer";
inline constexpr std::string_view kPartialAnswer = "rule:partial_answer";
inline constexpr std::string_view kOtherQuestionAnswer = "rule:other_question_answer";
inline constexpr std::string_view kNoAnswer = "rule:no_answer";

/// Token view of a record's context with the first gold's token extent.
struct ContextGeometry {
  std::string_view context;
  std::vector<text::Token> tokens;
  // Inclusive token range of the first gold answer, when answerable.
  std::size_t gold_first = 0;
  std::size_t gold_last = 0;
  bool has_gold = false;

  explicit ContextGeometry(const QaRecord& record)
      : context(record.context), tokens(text::tokenize(record.context)) {
    if (record.gold_answers.empty()) return;
    const auto& g = record.gold_answers.front();
    bool found = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].end > g.byte_start && tokens[i].begin < g.byte_end()) {
        if (!found) gold_first = i;
        gold_last = i;
        found = true;
      }
    }
    has_gold = found;
  }

  std::size_t size() const { return tokens.size(); }

  std::string span(std::size_t first, std::size_t last) const {
    return std::string(context.substr(tokens[first].begin, tokens[last].end - tokens[first].begin));
  }

  std::size_t gold_token_count() const { return has_gold ? gold_last - gold_first + 1 : 0; }
};

namespace detail {

inline bool overlaps_any_gold(const QaRecord& record, const text::Token& t) {
  for (const auto& g : record.gold_answers)
    if (t.end > g.byte_start && t.begin < g.byte_end()) return true;
  return false;
}

/// Draws a span from runs of tokens accepted by `eligible`.
template <typename Pred>
std::optional<std::string> draw_span(const ContextGeometry& geo, int max_tokens, Rng& rng,
                                     Pred&& eligible) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < geo.size(); ++i)
    if (eligible(i)) starts.push_back(i);
  if (starts.empty()) return std::nullopt;
  const std::size_t first = starts[rng.below(starts.size())];
  std::size_t run_end = first;
  while (run_end + 1 < geo.size() && eligible(run_end + 1) &&
         run_end + 1 - first + 1 <= static_cast<std::size_t>(max_tokens))
    ++run_end;
  const auto len = static_cast<std::size_t>(rng.between(1, static_cast<int64_t>(run_end - first + 1)));
  return geo.span(first, first + len - 1);
}

inline void require_gold(const QaRecord& record, const ContextGeometry& geo, std::string_view rule) {
  if (!record.is_answerable || !geo.has_gold)
    throw RuleNotApplicable(std::string(rule) + ": record '" + record.id + "' has no gold answer");
}

}  // namespace detail

/// A run of context tokens disjoint from every gold answer.
inline std::string rule_random_span(const QaRecord& record, Rng& rng, const RuleConfig& config = {}) {
  const ContextGeometry geo(record);
  auto span = detail::draw_span(geo, config.max_random_span_tokens, rng, [&](std::size_t i) {
    return !detail::overlaps_any_gold(record, geo.tokens[i]);
  });
  if (!span)
    throw RuleNotApplicable("random_span: context of '" + record.id + "' is fully covered by gold");
  return *span;
}

/// Left: a few tokens before the gold through a strict prefix of it.
/// Right: a strict suffix of the gold plus a few tokens after it.
inline std::string rule_partial_overlap(const QaRecord& record, Side side, Rng& rng,
                                        const RuleConfig& config = {}) {
  const ContextGeometry geo(record);
  detail::require_gold(record, geo, "partial_overlap");
  if (geo.gold_token_count() < 2)
    throw RuleNotApplicable("partial_overlap: single-token gold in '" + record.id + "'");
  const auto max_ext = static_cast<std::size_t>(config.max_extension_tokens);
  if (side == Side::left) {
    if (geo.gold_first == 0)
      throw RuleNotApplicable("partial_overlap(left): gold starts the context in '" + record.id + "'");
    const auto ext = static_cast<std::size_t>(rng.between(1, static_cast<int64_t>(std::min(max_ext, geo.gold_first))));
    const auto last = static_cast<std::size_t>(
        rng.between(static_cast<int64_t>(geo.gold_first), static_cast<int64_t>(geo.gold_last) - 1));
    return geo.span(geo.gold_first - ext, last);
  }
  const std::size_t after = geo.size() - 1 - geo.gold_last;
  if (after == 0)
    throw RuleNotApplicable("partial_overlap(right): gold ends the context in '" + record.id + "'");
  const auto first = static_cast<std::size_t>(
      rng.between(static_cast<int64_t>(geo.gold_first) + 1, static_cast<int64_t>(geo.gold_last)));
  const auto ext = static_cast<std::size_t>(rng.between(1, static_cast<int64_t>(std::min(max_ext, after))));
  return geo.span(first, geo.gold_last + ext);
}

/// The whole gold plus extra context tokens on the left, right or both.
inline std::string rule_longer_answer(const QaRecord& record, Rng& rng, const RuleConfig& config = {}) {
  const ContextGeometry geo(record);
  detail::require_gold(record, geo, "longer_answer");
  const auto max_ext = static_cast<std::size_t>(config.max_extension_tokens);
  const std::size_t before = geo.gold_first;
  const std::size_t after = geo.size() - 1 - geo.gold_last;
  if (before == 0 && after == 0)
    throw RuleNotApplicable("longer_answer: gold spans the entire context of '" + record.id + "'");

  enum Mode { kLeft, kRight, kBoth };
  std::vector<Mode> modes;
  if (before > 0) modes.push_back(kLeft);
  if (after > 0) modes.push_back(kRight);
  if (before > 0 && after > 0) modes.push_back(kBoth);
  const Mode mode = modes[rng.below(modes.size())];

  std::size_t left = 0, right = 0;
  if (mode != kRight) left = static_cast<std::size_t>(rng.between(1, static_cast<int64_t>(std::min(max_ext, before))));
  if (mode != kLeft) right = static_cast<std::size_t>(rng.between(1, static_cast<int64_t>(std::min(max_ext, after))));
  return geo.span(geo.gold_first - left, geo.gold_last + right);
}

/// Strict contiguous token subspans of `gold` whose normalization differs
/// from the gold's.
inline std::vector<std::string> strict_subspans(std::string_view gold) {
  const auto toks = text::tokenize(gold);
  const std::string target = metrics::normalize(gold);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    for (std::size_t j = i; j < toks.size(); ++j) {
      if (i == 0 && j + 1 == toks.size()) continue;
      std::string s(gold.substr(toks[i].begin, toks[j].end - toks[i].begin));
      if (metrics::normalize(s) != target) out.push_back(std::move(s));
    }
  }
  return out;
}

/// A smaller segment of the gold answer.
inline std::string rule_partial_answer(const QaRecord& record, Rng& rng) {
  if (!record.is_answerable)
    throw RuleNotApplicable("partial_answer: record '" + record.id + "' has no gold answer");
  const std::string& gold = record.chosen();
  if (text::tokenize(gold).size() < 2)
    throw RuleNotApplicable("partial_answer: single-token gold in '" + record.id + "'");
  const auto options = strict_subspans(gold);
  if (options.empty())
    throw RuleNotApplicable("partial_answer: no subspan of '" + record.id + "' differs after normalization");
  return options[rng.below(options.size())];
}

/// True when `a` equals, contains, or is contained in `b` after
/// normalization. Empty normalizations relate to everything.
inline bool related_answers(std::string_view a, std::string_view b) {
  const std::string na = metrics::normalize(a);
  const std::string nb = metrics::normalize(b);
  return na.find(nb) != std::string::npos || nb.find(na) != std::string::npos;
}

/// First sibling answer that is neither this record's gold nor part of it.
inline std::optional<std::string> rule_other_question_answer(const QaRecord& record,
                                                             const std::vector<const QaRecord*>& siblings) {
  if (!record.is_answerable) return std::nullopt;
  for (const QaRecord* sib : siblings) {
    if (sib->context != record.context) continue;
    for (const auto& cand : sib->gold_answers) {
      bool related = false;
      for (const auto& g : record.gold_answers) related = related || related_answers(cand.text, g.text);
      if (!related) return cand.text;
    }
  }
  return std::nullopt;
}

/// Answerable: "". Unanswerable: a sibling's answer, else a random span.
inline std::string rule_no_answer(const QaRecord& record, const std::vector<const QaRecord*>& siblings,
                                  Rng& rng, const RuleConfig& config = {}) {
  if (record.is_answerable) return "";
  std::vector<std::string_view> pool;
  for (const QaRecord* sib : siblings)
    if (sib->context == record.context)
      for (const auto& g : sib->gold_answers) pool.push_back(g.text);
  if (!pool.empty()) return std::string(pool[rng.below(pool.size())]);

  const ContextGeometry geo(record);
  if (geo.size() == 0)
    throw RuleNotApplicable("no_answer: context of '" + record.id + "' has no tokens");
  // Prefer spans that survive normalization; a few redraws suffice.
  std::string span;
  for (int attempt = 0; attempt < 8; ++attempt) {
    span = *detail::draw_span(geo, config.max_random_span_tokens, rng, [](std::size_t) { return true; });
    if (!metrics::normalize(span).empty()) break;
  }
  return span;
}

struct RuleOutput {
  std::string_view rule;
  std::string rejected;
};

/// Every applicable rule's output for one record, in fixed rule order,
/// excluding outputs equal to the chosen answer after normalization and
/// repeated texts.
inline std::vector<RuleOutput> rule_pool(const QaRecord& record,
                                         const std::vector<const QaRecord*>& siblings, Rng& rng,
                                         const RuleConfig& config) {
  std::vector<RuleOutput> raw;
  auto attempt = [&](std::string_view name, auto&& fn) {
    try {
      raw.push_back({name, fn()});
    } catch (const RuleNotApplicable&) {
    }
  };
  attempt(kRandomSpan, [&] { return rule_random_span(record, rng, config); });
  attempt(kPartialOverlapLeft, [&] { return rule_partial_overlap(record, Side::left, rng, config); });
  attempt(kPartialOverlapRight, [&] { return rule_partial_overlap(record, Side::right, rng, config); });
  attempt(kLongerAnswer, [&] { return rule_longer_answer(record, rng, config); });
  attempt(kPartialAnswer, [&] { return rule_partial_answer(record, rng); });
  if (auto other = rule_other_question_answer(record, siblings)) raw.push_back({kOtherQuestionAnswer, *other});
  attempt(kNoAnswer, [&] { return rule_no_answer(record, siblings, rng, config); });

  const std::string chosen = metrics::normalize(record.chosen());
  std::vector<RuleOutput> pool;
  for (auto& out : raw) {
    if (metrics::normalize(out.rejected) == chosen) continue;
    const bool repeated = std::any_of(pool.begin(), pool.end(),
                                      [&](const RuleOutput& o) { return o.rejected == out.rejected; });
    if (!repeated) pool.push_back(std::move(out));
  }
  return pool;
}

/// Samples `negatives_per_tuple` rule outputs per record, deduplicates on
/// (prompt, rejected), and subsamples down to `global_cap`. Output is
/// sorted by id then rejected text.
inline std::vector<PreferencePair> forge_rules(const Corpus& corpus, const RuleConfig& config) {
  config.validate();
  const SiblingIndex siblings(corpus);
  std::vector<PreferencePair> pairs;
  for (const auto& record : corpus.records) {
    Rng rng(derive_seed(config.seed, record.id));
    auto pool = rule_pool(record, siblings.of(record), rng, config);
    rng.shuffle(std::span(pool));
    const auto take = std::min(pool.size(), static_cast<std::size_t>(config.negatives_per_tuple));
    for (std::size_t i = 0; i < take; ++i)
      pairs.push_back(make_preference_pair(record, std::move(pool[i].rejected), std::string(pool[i].rule)));
  }
  pairs = dedup_pairs(std::move(pairs));

  const auto cap = static_cast<std::size_t>(config.global_cap);
  if (pairs.size() > cap) {
    Rng rng(derive_seed(config.seed, "global_cap"));
    rng.shuffle(std::span(pairs));
    pairs.resize(cap);
  }
  sort_pairs(pairs);
  return pairs;
}

// -- Post-hoc predicate checks --------------------------------------------

namespace detail {

struct TokenRange {
  std::size_t first;
  std::size_t last;
};

/// Token-aligned occurrences of `s` in the context.
inline std::vector<TokenRange> aligned_occurrences(const ContextGeometry& geo, std::string_view s) {
  std::vector<TokenRange> out;
  if (s.empty()) return out;
  for (std::size_t i = 0; i < geo.size(); ++i) {
    const std::size_t begin = geo.tokens[i].begin;
    if (geo.context.compare(begin, s.size(), s) != 0) continue;
    for (std::size_t j = i; j < geo.size() && geo.tokens[j].end <= begin + s.size(); ++j)
      if (geo.tokens[j].end == begin + s.size()) out.push_back({i, j});
  }
  return out;
}

}  // namespace detail

/// Re-checks that `pair.rejected` satisfies the defining predicate of the
/// rule named in `pair.source`. Returns an empty string when it holds, or
/// a description of the violation.
inline std::string check_rule_predicate(const PreferencePair& pair, const QaRecord& record,
                                        const std::vector<const QaRecord*>& siblings,
                                        const RuleConfig& config = {}) {
  const ContextGeometry geo(record);
  const std::string_view rejected = pair.rejected;
  if (pair.id != record.id) return "pair id does not match record";
  if (pair.prompt != render_prompt(record).text) return "prompt does not match record";
  if (pair.chosen != record.chosen()) return "chosen is not the first gold answer";
  if (metrics::normalize(rejected) == metrics::normalize(pair.chosen)) return "rejected equals chosen";
  if (pair.f1_rejected_vs_gold != metrics::token_f1(rejected, pair.chosen)) return "stored f1 is stale";

  const auto occ = detail::aligned_occurrences(geo, rejected);
  const auto max_ext = static_cast<std::size_t>(config.max_extension_tokens);
  const std::size_t gf = geo.gold_first, gl = geo.gold_last;
  auto any_occ = [&](auto&& pred) { return std::any_of(occ.begin(), occ.end(), pred); };

  if (pair.source == kRandomSpan) {
    const bool ok = any_occ([&](const detail::TokenRange& r) {
      if (r.last - r.first + 1 > static_cast<std::size_t>(config.max_random_span_tokens)) return false;
      for (std::size_t i = r.first; i <= r.last; ++i)
        if (detail::overlaps_any_gold(record, geo.tokens[i])) return false;
      return true;
    });
    return ok ? "" : "random span overlaps gold or is not a context span";
  }
  if (pair.source == kPartialOverlapLeft || pair.source == kPartialOverlapRight) {
    if (!geo.has_gold) return "partial overlap on a record without gold";
    const bool left = pair.source == kPartialOverlapLeft;
    const bool ok = any_occ([&](const detail::TokenRange& r) {
      if (left) return r.first < gf && gf - r.first <= max_ext && r.last >= gf && r.last < gl;
      return r.first > gf && r.first <= gl && r.last > gl && r.last - gl <= max_ext;
    });
    return ok ? "" : "span does not partially overlap the gold on the stated side";
  }
  if (pair.source == kLongerAnswer) {
    if (!geo.has_gold) return "longer answer on a record without gold";
    const bool ok = rejected.find(pair.chosen) != std::string_view::npos &&
                    rejected.size() > pair.chosen.size() && any_occ([&](const detail::TokenRange& r) {
                      return r.first <= gf && r.last >= gl && (r.first < gf || r.last > gl);
                    });
    return ok ? "" : "span does not strictly contain the gold";
  }
  if (pair.source == kPartialAnswer) {
    const auto subs = strict_subspans(pair.chosen);
    return std::find(subs.begin(), subs.end(), rejected) != subs.end() ? ""
                                                                        : "not a strict subspan of the gold";
  }
  auto is_sibling_answer = [&] {
    for (const QaRecord* sib : siblings)
      if (sib->context == record.context)
        for (const auto& g : sib->gold_answers)
          if (g.text == rejected) return true;
    return false;
  };
  if (pair.source == kOtherQuestionAnswer) {
    if (!is_sibling_answer()) return "not an answer to another question on this context";
    for (const auto& g : record.gold_answers)
      if (related_answers(rejected, g.text)) return "sibling answer overlaps the gold";
    return "";
  }
  if (pair.source == kNoAnswer) {
    if (record.is_answerable) return rejected.empty() ? "" : "answerable record needs empty rejected";
    if (rejected.empty()) return "empty rejected for unanswerable record";
    return is_sibling_answer() || !occ.empty() ? "" : "neither a sibling answer nor a context span";
  }
  return "unknown rule source '" + pair.source + "'";
}

}  // namespace mrcdpo::rules
