#include <catch_amalgamated.hpp>

#include "mrcdpo/metrics.hpp"
#include "support.hpp"

using namespace mrcdpo;
using namespace mrcdpo::metrics;
using Catch::Approx;

TEST_CASE("normalize applies the SQuAD steps", "[metrics]") {
  CHECK(normalize("The heart is normal.") == "heart is normal");
  CHECK(normalize("") == "");
  CHECK(normalize("An  apple") == "apple");
  // Punctuation is stripped before articles, so "the_cat" fuses.
  CHECK(normalize("the_cat sat") == "thecat sat");
  CHECK(normalize("a.b c") == "ab c");
  CHECK(normalize("theory of a thin") == "theory of thin");
  CHECK(normalize("1.5 cm nodule") == "15 cm nodule");
}

TEST_CASE("normalize handles non-ASCII text", "[metrics]") {
  CHECK(normalize("Straße \u2014 left") == "straße left");
  CHECK(normalize("ÉDEMA, mild") == "édema mild");
  CHECK(normalize("« quoted » text") == "quoted text");
  // Accented letters are word characters: no article is removed here.
  CHECK(normalize("ané theé") == "ané theé");
  // Non-breaking and ideographic spaces collapse like ASCII ones.
  CHECK(normalize("left\u00a0\u3000lobe") == "left lobe");
}

TEST_CASE("token_f1 oracles", "[metrics]") {
  CHECK(token_f1("small left pleural effusion", "left pleural effusion") == Approx(0.857142857142857).epsilon(1e-12));
  CHECK(token_f1("left lobe", "left upper lobe") == Approx(0.8).epsilon(1e-12));
  CHECK(token_f1("nodule nodule mass", "nodule mass mass") == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(token_f1("theory of a thin", "theory thin") == Approx(0.8).epsilon(1e-12));
  CHECK(token_f1("", "") == 1.0);
  CHECK(token_f1("x y", "z w") == 0.0);
  CHECK(token_f1("", "x") == 0.0);
  CHECK(token_f1("x", "") == 0.0);
  // Normalizes to empty on both sides.
  CHECK(token_f1("the", "a") == 1.0);
}

TEST_CASE("exact_match compares normalized strings", "[metrics]") {
  CHECK(exact_match("The heart is normal.", "heart is normal"));
  CHECK(exact_match("", ""));
  CHECK_FALSE(exact_match("left", "right"));
}

TEST_CASE("evaluate takes the best gold per question", "[metrics]") {
  using testing::answerable;
  using testing::unanswerable;
  QaRecord multi = answerable("m", "the left lobe is clear", "Where?", "left lobe");
  multi.gold_answers.push_back(testing::gold_at(multi.context, "lobe"));
  const auto corpus = testing::corpus_of({multi, unanswerable("u", "no mass", "Mass?"),
                                          answerable("p", "mild edema noted", "Edema?", "mild edema")});

  const auto perfect = evaluate({{"m", "left lobe"}, {"u", ""}, {"p", "mild edema"}}, corpus);
  CHECK(perfect.em == 100.0);
  CHECK(perfect.f1 == 100.0);

  const auto report = evaluate({{"m", "lobe"}, {"u", ""}, {"p", "edema"}}, corpus);
  CHECK(report.per_question.at("m").em);
  CHECK(report.per_question.at("u") == PairScore{true, 1.0});
  CHECK_FALSE(report.per_question.at("p").em);
  CHECK(report.per_question.at("p").f1 == Approx(2.0 / 3.0));
  CHECK(report.em == Approx(200.0 / 3.0));
  CHECK(report.f1 == Approx(100.0 * (1.0 + 1.0 + 2.0 / 3.0) / 3.0));

  REQUIRE_THROWS_AS(evaluate({{"m", "x"}}, corpus), ValidationError);
}

TEST_CASE("golds that normalize to empty are ignored", "[metrics]") {
  QaRecord r = testing::answerable("r", "the nodule", "What?", "the");
  r.gold_answers.push_back(testing::gold_at(r.context, "nodule"));
  CHECK(score_against_golds("nodule", r).em);
  CHECK_FALSE(score_against_golds("", r).em);
}

TEST_CASE("report JSON carries two-decimal scores", "[metrics]") {
  EvalReport r;
  r.em = 66.666666;
  r.f1 = 71.234567;
  r.per_question["a"] = {true, 1.0};
  const auto j = report_to_json(r);
  CHECK(j["exact"].get<double>() == 66.67);
  CHECK(j["f1"].get<double>() == 71.23);
  CHECK(j["total"].get<int>() == 1);
}
