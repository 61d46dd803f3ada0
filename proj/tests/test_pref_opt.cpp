#include <catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "mrcdpo/pref_opt.hpp"
#include "support.hpp"

using namespace mrcdpo;
using namespace mrcdpo::pref;
using Catch::Approx;

namespace {

PairLogps with_margin(double h) { return {h, 0.0, 0.0, 0.0}; }

policy::PolicyOptions small_options() {
  policy::PolicyOptions o;
  o.dim = 1 << 12;
  return o;
}

std::vector<PreferencePair> toy_pairs() {
  const auto c = testing::pattern_corpus(8, 6, "p");
  std::vector<PreferencePair> pairs;
  for (const auto& r : c.records) {
    pairs.push_back(make_preference_pair(r, "", "rule:no_answer"));
    pairs.push_back(make_preference_pair(r, ";", "rule:random_span"));
  }
  return pairs;
}

}  // namespace

TEST_CASE("scalar loss oracles", "[pref]") {
  CHECK(dpo_loss(with_margin(0.0), 0.1) == Approx(0.6931471805599453).margin(1e-12));
  CHECK(dpo_loss(with_margin(1.5), 0.1) == Approx(0.6209570477895321).margin(1e-9));
  CHECK(bt_preference_prob(2.0, 1.0) == Approx(0.7310585786300049).margin(1e-9));
  CHECK(-std::log(bt_preference_prob(2.0, 1.0)) == Approx(0.3132616875182228).margin(1e-12));
  CHECK(kl_shaped_reward(1.0, 0.1, -2.0, -2.5) == Approx(0.95).margin(1e-12));
  CHECK(ipo_loss(with_margin(0.0), 0.1) == Approx(25.0).margin(1e-12));
  CHECK(rso_hinge_loss(with_margin(1.5), 0.1) == Approx(0.85).margin(1e-12));
  CHECK(rso_hinge_loss(with_margin(20.0), 0.1) == 0.0);
}

TEST_CASE("margin is the difference of log-ratios", "[pref]") {
  const PairLogps lp{-1.0, -2.0, -3.0, -2.5};
  CHECK(lp.margin() == Approx(1.5));
  CHECK(dpo_loss(lp, 0.1) == Approx(0.6209570477895321).margin(1e-12));
}

TEST_CASE("loss slopes match the scalar derivatives", "[pref]") {
  for (auto kind : {LossKind::dpo, LossKind::ipo, LossKind::rso_hinge}) {
    for (double h : {-3.0, -0.4, 0.7, 2.5}) {
      const double e = 1e-6;
      const double fd = (preference_loss(kind, with_margin(h + e), 0.1) - preference_loss(kind, with_margin(h - e), 0.1)) / (2 * e);
      CHECK(preference_loss_slope(kind, h, 0.1) == Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("reward model loss at zero weights is ln 2", "[pref]") {
  const auto pairs = toy_pairs();
  CHECK(reward_model_loss(RewardParams::zeros(1 << 12), pairs) == std::log(2.0));
}

TEST_CASE("loss kinds parse from their names", "[pref]") {
  CHECK(parse_loss_kind("dpo") == LossKind::dpo);
  CHECK(parse_loss_kind("ipo") == LossKind::ipo);
  CHECK(parse_loss_kind("rso") == LossKind::rso_hinge);
  REQUIRE_THROWS_AS(parse_loss_kind("kto"), ValidationError);
}

TEST_CASE("preference gradients match finite differences", "[pref][gradient]") {
  const auto data = resolve_pairs(toy_pairs(), small_options());
  uint64_t seed = 31;
  for (auto kind : {LossKind::dpo, LossKind::ipo, LossKind::rso_hinge}) {
    const auto probes = testing::probe_preference(kind, 0.1, data, small_options().dim, 30, seed++);
    REQUIRE(probes.size() == 30);
    for (const auto& p : probes) CHECK(p.relative_error() < 1e-6);
  }
}

TEST_CASE("pairs resolve onto prompt candidates", "[pref]") {
  auto pairs = toy_pairs();
  const auto data = resolve_pairs(pairs, small_options());
  CHECK(data.examples.size() == 8);
  CHECK(data.items.size() == pairs.size());
  pairs[0].rejected = pairs[0].chosen;
  REQUIRE_THROWS_AS(resolve_pairs(pairs, small_options()), ValidationError);
  pairs[0].rejected = "nowhere in context";
  REQUIRE_THROWS_AS(resolve_pairs(pairs, small_options()), ValidationError);
}

TEST_CASE("zero epochs return the SFT policy", "[pref]") {
  const auto dev = testing::pattern_corpus(5, 9, "d", Split::dev);
  std::mt19937_64 rng(4);
  auto sft = policy::PolicyParams::zeros(small_options(), 1);
  sft.weights = testing::random_weights(sft.options.dim, rng, 0.05);
  LossConfig cfg;
  cfg.max_epochs = 0;
  const auto res = dpo_train(sft, toy_pairs(), dev, cfg, 3);
  CHECK(res.params == sft);
  CHECK(res.best_epoch == 0);
}

TEST_CASE("dpo_train leaves the reference untouched and raises the margin", "[pref]") {
  const auto dev = testing::pattern_corpus(5, 9, "d", Split::dev);
  const auto sft = policy::PolicyParams::zeros(small_options(), 1);
  const auto snapshot = sft;
  LossConfig cfg;
  cfg.max_epochs = 5;
  cfg.early_stopping = false;
  for (auto kind : {LossKind::dpo, LossKind::ipo, LossKind::rso_hinge}) {
    cfg.kind = kind;
    const auto res = dpo_train(sft, toy_pairs(), dev, cfg, 3);
    CHECK(sft == snapshot);
    REQUIRE(res.log.size() == 6);
    CHECK(res.log.back().mean_margin > 0.0);
    CHECK(res.params.all_finite());
  }
}

TEST_CASE("dpo_train is deterministic and honours accumulation", "[pref]") {
  const auto dev = testing::pattern_corpus(5, 9, "d", Split::dev);
  const auto sft = policy::PolicyParams::zeros(small_options(), 1);
  LossConfig cfg;
  cfg.max_epochs = 2;
  cfg.early_stopping = false;
  const auto a = dpo_train(sft, toy_pairs(), dev, cfg, 3);
  CHECK(dpo_train(sft, toy_pairs(), dev, cfg, 3).params == a.params);
  cfg.micro_batch = 2;
  cfg.accumulation_steps = 8;
  const auto b = dpo_train(sft, toy_pairs(), dev, cfg, 3);
  CHECK(b.params.all_finite());
  CHECK(cfg.batch_size() == 16);
}

TEST_CASE("preference config validation", "[pref]") {
  LossConfig cfg;
  cfg.beta = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
  cfg = LossConfig::paper_parity();
  CHECK(cfg.learning_rate == 5e-7);
  CHECK(cfg.batch_size() == 16);
}
