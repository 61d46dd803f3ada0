#include <catch_amalgamated.hpp>

#include <random>
#include <set>

#include "gradcheck.hpp"
#include "mrcdpo/model_forge.hpp"
#include "mrcdpo/rule_forge.hpp"
#include "mrcdpo/synthetic.hpp"
#include "support.hpp"

using namespace mrcdpo;
using Catch::Approx;

namespace {

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"the", "A", "an", "nodule", "Left", "lobe", ".", ",", "-",
                                                  " ", "  ", "\t", "\u00e9", "\u2014", "1.5", "_", "cm", "'"};
  std::string s;
  const auto n = rng() % 10;
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng() % pieces.size()] + (rng() % 2 ? " " : "");
  return s;
}

}  // namespace

TEST_CASE("normalize is idempotent and trims", "[property][metrics]") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_text(rng);
    const auto n = metrics::normalize(s);
    CHECK(metrics::normalize(n) == n);
    CHECK(n.find("  ") == std::string::npos);
    if (!n.empty()) {
      CHECK(n.front() != ' ');
      CHECK(n.back() != ' ');
    }
  }
}

TEST_CASE("token F1 is symmetric and bounded", "[property][metrics]") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_text(rng), b = random_text(rng);
    const double f = metrics::token_f1(a, b);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(f == Approx(metrics::token_f1(b, a)).margin(1e-15));
    CHECK(metrics::token_f1(a, a) == 1.0);
    if (metrics::exact_match(a, b)) CHECK(f == 1.0);
  }
}

TEST_CASE("filters nest for every threshold pair", "[property][forge]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PreferencePair> pairs(rng() % 40);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      pairs[i].prompt = std::to_string(i);
      pairs[i].f1_rejected_vs_gold = static_cast<double>(rng() % 11) / 10.0;
    }
    const double t1 = static_cast<double>(1 + rng() % 10) / 10.0;
    const double t2 = static_cast<double>(1 + rng() % 10) / 10.0;
    const auto lo = forge::filter_by_f1(pairs, {std::min(t1, t2)});
    const auto hi = forge::filter_by_f1(pairs, {std::max(t1, t2)});
    CHECK(lo.size() <= hi.size());
    std::set<std::string> keys;
    for (const auto& p : hi) keys.insert(p.prompt);
    for (const auto& p : lo) CHECK(keys.count(p.prompt) == 1);
  }
}

TEST_CASE("forged rule pairs satisfy their predicates", "[property][rules]") {
  synthetic::SyntheticConfig scfg;
  scfg.train_reports = 40;
  const auto train = synthetic::generate(scfg).train;
  const SiblingIndex siblings(train);
  std::map<std::string, const QaRecord*> by_id;
  for (const auto& r : train.records) by_id[r.id] = &r;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    rules::RuleConfig cfg;
    cfg.seed = seed;
    cfg.negatives_per_tuple = 3;
    const auto pairs = rules::forge_rules(train, cfg);
    CHECK(pairs.size() <= static_cast<std::size_t>(cfg.global_cap));
    for (const auto& p : pairs) {
      const auto& r = *by_id.at(p.id);
      INFO(p.id << " " << p.source << " '" << p.rejected << "'");
      CHECK(rules::check_rule_predicate(p, r, siblings.of(r), cfg).empty());
      CHECK(metrics::normalize(p.rejected) != metrics::normalize(p.chosen));
      CHECK(p.f1_rejected_vs_gold == metrics::token_f1(p.rejected, p.chosen));
    }
  }
}

TEST_CASE("policy distributions normalize over random prompts", "[property][policy]") {
  std::mt19937_64 rng(5);
  policy::PolicyOptions opts;
  opts.dim = 1 << 12;
  auto params = policy::PolicyParams::zeros(opts);
  params.weights = testing::random_weights(opts.dim, rng, 1.0);
  const auto corpus = testing::pattern_corpus(30, 7, "n");
  for (const auto& r : corpus.records) {
    const auto ex = policy::make_example(r, opts);
    const auto logp = policy::log_softmax(ex.scores(params.weights));
    double total = 0.0;
    for (double lp : logp) {
      CHECK(lp <= 0.0);
      total += std::exp(lp);
    }
    CHECK(total == Approx(1.0).epsilon(1e-12));
    CHECK(ex.find(policy::predict(params, ex)).has_value());
  }
}

TEST_CASE("corpus serialization is a fixed point", "[property][corpus]") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    synthetic::SyntheticConfig scfg;
    scfg.seed = seed;
    scfg.train_reports = 5;
    scfg.dev_reports = scfg.test_reports = 1;
    const auto c = synthetic::generate(scfg).train;
    CHECK(parse_corpus(json::parse(serialize_corpus(c)), c.split) == c);
  }
}
