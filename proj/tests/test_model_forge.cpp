#include <catch_amalgamated.hpp>

#include "mrcdpo/model_forge.hpp"
#include "support.hpp"

using namespace mrcdpo;
using namespace mrcdpo::forge;
using testing::answerable;
using testing::corpus_of;
using testing::unanswerable;

namespace {

Corpus eight_contexts() {
  std::vector<QaRecord> rs;
  for (int i = 0; i < 8; ++i) {
    const std::string ctx = "report " + std::to_string(i) + " : finding : nodule ; side : left";
    rs.push_back(answerable("c" + std::to_string(i) + "f", ctx, "What is the finding?", "nodule"));
    rs.push_back(answerable("c" + std::to_string(i) + "s", ctx, "What is the side?", "left"));
  }
  return corpus_of(rs);
}

SplitHalfConfig small_config() {
  SplitHalfConfig cfg;
  cfg.sft.max_epochs = 3;
  cfg.dev = testing::pattern_corpus(10, 2, "dev", Split::dev);
  return cfg;
}

}  // namespace

TEST_CASE("split-half predicts every record twice", "[forge]") {
  const auto c = eight_contexts();
  const auto res = split_half_predict(c, small_config(), 11);
  REQUIRE(res.predictions.size() == 2 * c.size());
  std::map<std::string, int> trained;
  for (const auto& p : res.predictions) trained[p.id] += p.was_in_training_half ? 1 : 0;
  for (const auto& [id, n] : trained) CHECK(n == 1);
  CHECK(split_half_predict(c, small_config(), 11).predictions == res.predictions);
}

TEST_CASE("collect_incorrect keeps wrong predictions only", "[forge]") {
  const auto c = corpus_of({answerable("a", "the left upper lobe", "Where?", "left upper lobe"),
                            answerable("b", "mild edema", "What?", "mild edema"), unanswerable("u", "no mass", "Mass?")});
  const std::vector<PredictionRecord> preds = {
      {"a", "left lobe", Half::A, true},  {"a", "left lobe", Half::B, false}, {"b", "mild edema", Half::A, false},
      {"b", "edema", Half::B, true},      {"u", "", Half::A, true},           {"u", "mass", Half::B, false}};
  const auto pairs = collect_incorrect(preds, c);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].id == "a");
  CHECK(pairs[0].f1_rejected_vs_gold == Catch::Approx(0.8).epsilon(1e-12));
  CHECK(pairs[0].source == "model:A");
  CHECK(pairs[1].rejected == "edema");
  CHECK(pairs[2].chosen.empty());
  CHECK(pairs[2].rejected == "mass");
  for (const auto& p : pairs) CHECK_FALSE(metrics::exact_match(p.rejected, p.chosen));

  REQUIRE_THROWS_AS(collect_incorrect({{"zzz", "x", Half::A, true}}, c), ValidationError);
}

TEST_CASE("filter_by_f1 applies a strict threshold", "[forge]") {
  const auto r = answerable("a", "the left upper lobe", "Where?", "left upper lobe");
  const std::vector<PreferencePair> pairs = {make_preference_pair(r, "left lobe", "model:A"),
                                             make_preference_pair(r, "", "model:B")};
  CHECK(filter_by_f1(pairs, {0.9}).size() == 2);
  CHECK(filter_by_f1(pairs, {0.7}).size() == 1);
  CHECK(filter_by_f1(pairs, {0.7})[0].rejected.empty());
  CHECK(filter_by_f1(pairs, {0.8}).size() == 1);
  REQUIRE_THROWS_AS(filter_by_f1(pairs, {0.0}), ValidationError);
  REQUIRE_THROWS_AS(filter_by_f1(pairs, {1.5}), ValidationError);
}

TEST_CASE("prediction records round-trip through JSON", "[forge]") {
  const PredictionRecord p{"x", "left lobe", Half::B, true};
  CHECK(prediction_from_json(prediction_to_json(p)) == p);
}
