#include <catch_amalgamated.hpp>

#include <set>

#include "mrcdpo/rule_forge.hpp"
#include "mrcdpo/synthetic.hpp"
#include "support.hpp"

using namespace mrcdpo;
using namespace mrcdpo::rules;
using testing::answerable;
using testing::corpus_of;
using testing::unanswerable;

namespace {

bool is_context_substring(const QaRecord& r, const std::string& s) { return r.context.find(s) != std::string::npos; }

}  // namespace

TEST_CASE("random_span never overlaps the gold", "[rules]") {
  const auto r = answerable("r", "lungs are hyperinflated . 1.5 cm nodule seen", "What?", "1.5 cm nodule");
  const std::set<std::string> allowed = {"lungs", "are", "hyperinflated", ".", "seen"};
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto span = rule_random_span(r, rng);
    CHECK(is_context_substring(r, span));
    for (const auto& w : text::split(span)) CHECK(allowed.count(w) == 1);
  }
  Rng a(42), b(42);
  CHECK(rule_random_span(r, a) == rule_random_span(r, b));
}

TEST_CASE("random_span fails when gold covers the context", "[rules]") {
  Rng rng(1);
  REQUIRE_THROWS_AS(rule_random_span(answerable("r", "nodule", "What?", "nodule"), rng), RuleNotApplicable);
}

TEST_CASE("partial_overlap respects the stated side", "[rules]") {
  const std::string gold = "left upper lobe pulmonary nodule";
  const auto r = answerable("r", "there is a left upper lobe pulmonary nodule seen today", "What?", gold);
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto left = rule_partial_overlap(r, Side::left, rng);
    const auto right = rule_partial_overlap(r, Side::right, rng);
    CHECK(left.find("left") != std::string::npos);
    CHECK(left.find("nodule") == std::string::npos);
    CHECK(right.find("nodule") != std::string::npos);
    CHECK(right.find("left upper") == std::string::npos);
    for (const auto& s : {left, right}) {
      const double f1 = metrics::token_f1(s, gold);
      CHECK(f1 > 0.0);
      CHECK(f1 < 1.0);
    }
  }
}

TEST_CASE("partial_overlap preconditions", "[rules]") {
  Rng rng(0);
  REQUIRE_THROWS_AS(rule_partial_overlap(answerable("r", "left lobe nodule seen", "Q?", "left lobe"), Side::left, rng),
                    RuleNotApplicable);
  REQUIRE_THROWS_AS(rule_partial_overlap(answerable("r", "a left lobe", "Q?", "left lobe"), Side::right, rng),
                    RuleNotApplicable);
  REQUIRE_THROWS_AS(rule_partial_overlap(answerable("r", "a nodule b", "Q?", "nodule"), Side::left, rng),
                    RuleNotApplicable);
  REQUIRE_THROWS_AS(rule_partial_overlap(unanswerable("r", "a b c", "Q?"), Side::left, rng), RuleNotApplicable);
}

TEST_CASE("longer_answer strictly contains the gold", "[rules]") {
  const auto r = answerable("r", "there is a 1.5 cm nodule today", "What?", "1.5 cm nodule");
  std::set<std::string> seen;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto out = rule_longer_answer(r, rng);
    CHECK(out.find("1.5 cm nodule") != std::string::npos);
    CHECK(out.size() > std::string("1.5 cm nodule").size());
    CHECK(metrics::token_f1(out, "1.5 cm nodule") > 0.0);
    seen.insert(out);
  }
  CHECK(seen.count("a 1.5 cm nodule") == 1);
  CHECK(seen.count("1.5 cm nodule today") == 1);
  Rng rng(0);
  REQUIRE_THROWS_AS(rule_longer_answer(answerable("r", "1.5 cm nodule", "Q?", "1.5 cm nodule"), rng),
                    RuleNotApplicable);
}

TEST_CASE("partial_answer enumerates strict subspans", "[rules]") {
  const std::set<std::string> expected = {"left", "upper", "lobe", "left upper", "upper lobe"};
  const auto subs = strict_subspans("left upper lobe");
  CHECK(std::set<std::string>(subs.begin(), subs.end()) == expected);
  const auto r = answerable("r", "the left upper lobe", "Q?", "left upper lobe");
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    CHECK(expected.count(rule_partial_answer(r, rng)) == 1);
  }
  Rng rng(0);
  REQUIRE_THROWS_AS(rule_partial_answer(answerable("r", "a nodule", "Q?", "nodule"), rng), RuleNotApplicable);
}

TEST_CASE("partial_answer skips subspans equal after normalization", "[rules]") {
  // "the nodule" normalizes to "nodule", so only "the" remains.
  const auto subs = strict_subspans("the nodule");
  CHECK(subs == std::vector<std::string>{"the"});
}

TEST_CASE("other_question_answer picks an unrelated sibling answer", "[rules]") {
  const std::string ctx = "1.5 cm left upper lobe pulmonary nodule . kidneys are normal in appearance .";
  const auto r = answerable("r", ctx, "What nodule?", "1.5 cm left upper lobe pulmonary nodule");
  const auto kidney = answerable("k", ctx, "Kidneys?", "kidneys are normal in appearance");
  const auto same = answerable("s", ctx, "Nodule?", "1.5 cm left upper lobe pulmonary nodule");
  const auto part = answerable("p", ctx, "Where?", "left upper lobe");

  CHECK(rule_other_question_answer(r, {&kidney}) == "kidneys are normal in appearance");
  CHECK(rule_other_question_answer(r, {}) == std::nullopt);
  CHECK(rule_other_question_answer(r, {&same}) == std::nullopt);
  CHECK(rule_other_question_answer(r, {&part}) == std::nullopt);
  CHECK(rule_other_question_answer(r, {&same, &part, &kidney}) == "kidneys are normal in appearance");
}

TEST_CASE("no_answer follows the fallback order", "[rules]") {
  const std::string ctx = "mild edema of the left leg";
  Rng rng(42);
  CHECK(rule_no_answer(answerable("a", ctx, "Q?", "mild edema"), {}, rng) == "");
  const auto sib = answerable("s", ctx, "Q?", "mild edema");
  CHECK(rule_no_answer(unanswerable("u", ctx, "Q?"), {&sib}, rng) == "mild edema");
  const auto u = unanswerable("u", ctx, "Q?");
  const auto span = rule_no_answer(u, {}, rng);
  CHECK_FALSE(span.empty());
  CHECK(is_context_substring(u, span));
  REQUIRE_THROWS_AS(rule_no_answer(unanswerable("e", "", "Q?"), {}, rng), RuleNotApplicable);
}

TEST_CASE("forge_rules on one record yields distinct negatives", "[rules]") {
  const auto c = corpus_of({answerable("r", "there is a 1.5 cm nodule today", "What?", "1.5 cm nodule")});
  RuleConfig cfg;
  cfg.seed = 5;
  const auto pairs = forge_rules(c, cfg);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].rejected != pairs[1].rejected);
  const SiblingIndex sibs(c);
  for (const auto& p : pairs) CHECK(check_rule_predicate(p, c.records[0], sibs.of(c.records[0]), cfg).empty());
}

TEST_CASE("forge_rules caps the global output", "[rules]") {
  synthetic::SyntheticConfig scfg;
  const auto data = synthetic::generate(scfg);
  RuleConfig cfg;
  cfg.seed = 9;
  cfg.negatives_per_tuple = 7;
  const auto uncapped = forge_rules(data.train, cfg);
  REQUIRE(uncapped.size() > 600);
  cfg.global_cap = 600;
  const auto capped = forge_rules(data.train, cfg);
  CHECK(capped.size() == 600);
  std::set<std::pair<std::string, std::string>> all;
  for (const auto& p : uncapped) all.emplace(p.id, p.rejected);
  for (const auto& p : capped) CHECK(all.count({p.id, p.rejected}) == 1);
}

TEST_CASE("forge_rules is deterministic and sorted", "[rules]") {
  const auto data = synthetic::generate({});
  RuleConfig cfg;
  cfg.seed = 3;
  const auto a = forge_rules(data.train, cfg);
  const auto b = forge_rules(data.train, cfg);
  CHECK(pairs_to_jsonl(a) == pairs_to_jsonl(b));
  CHECK(std::is_sorted(a.begin(), a.end(), [](const auto& x, const auto& y) {
    return std::tie(x.id, x.rejected) < std::tie(y.id, y.rejected);
  }));
  cfg.seed = 4;
  CHECK(pairs_to_jsonl(forge_rules(data.train, cfg)) != pairs_to_jsonl(a));
}

TEST_CASE("predicate checker flags violations", "[rules]") {
  const auto r = answerable("r", "there is a 1.5 cm nodule today", "What?", "1.5 cm nodule");
  auto bad = make_preference_pair(r, "there is", std::string(kLongerAnswer));
  CHECK_FALSE(check_rule_predicate(bad, r, {}).empty());
  bad = make_preference_pair(r, "cm nodule", std::string(kRandomSpan));
  CHECK_FALSE(check_rule_predicate(bad, r, {}).empty());
  bad = make_preference_pair(r, "x", std::string(kNoAnswer));
  CHECK_FALSE(check_rule_predicate(bad, r, {}).empty());
  auto stale = make_preference_pair(r, "there is", std::string(kRandomSpan));
  CHECK(check_rule_predicate(stale, r, {}).empty());
  stale.f1_rejected_vs_gold = 0.5;
  CHECK_FALSE(check_rule_predicate(stale, r, {}).empty());
}

TEST_CASE("rule config bounds must be positive", "[rules]") {
  RuleConfig cfg;
  cfg.global_cap = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
}
