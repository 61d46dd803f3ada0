#pragma once

// Model-based negatives: train one policy per context half, let both
// predict the whole training corpus, and turn their wrong answers into
// rejected responses.

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"
#include "mrcdpo/pairs.hpp"
#include "mrcdpo/policy.hpp"
#include "mrcdpo/sft.hpp"

namespace mrcdpo::forge {

enum class Half { A, B };

inline std::string_view to_string(Half h) { return h == Half::A ? "A" : "B"; }

struct PredictionRecord {
  std::string id;
  std::string prediction;
  Half half_trained_on = Half::A;
  bool was_in_training_half = false;

  bool operator==(const PredictionRecord&) const = default;
};

struct SplitHalfConfig {
  SftConfig sft;
  Corpus dev;  // early-stopping set for both half models
};

struct SplitHalfResult {
  std::vector<PredictionRecord> predictions;
  TrainResult model_a;
  TrainResult model_b;
};

inline SplitHalfResult split_half_predict(const Corpus& corpus, const SplitHalfConfig& config, uint64_t seed) {
  auto [half_a, half_b] = split_contexts(corpus, seed);
  SplitHalfResult out;
  out.model_a = sft_train(half_a, config.dev, config.sft, derive_seed(seed, "half-A"));
  out.model_b = sft_train(half_b, config.dev, config.sft, derive_seed(seed, "half-B"));

  std::unordered_map<std::string, bool> in_a;
  for (const auto& r : half_a.records) in_a[r.id] = true;
  const auto examples = policy::make_examples(corpus, config.sft.policy);
  out.predictions.reserve(2 * corpus.size());
  for (Half half : {Half::A, Half::B}) {
    const auto& params = half == Half::A ? out.model_a.params : out.model_b.params;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& r = corpus.records[i];
      const bool trained_on = in_a.count(r.id) ? half == Half::A : half == Half::B;
      out.predictions.push_back({r.id, policy::predict(params, examples[i]), half, trained_on});
    }
  }
  return out;
}

/// One pair per wrong prediction (no exact match against any gold),
/// deduplicated on (prompt, rejected), sorted by id then rejected text.
inline std::vector<PreferencePair> collect_incorrect(const std::vector<PredictionRecord>& predictions,
                                                     const Corpus& corpus) {
  std::unordered_map<std::string_view, const QaRecord*> by_id;
  for (const auto& r : corpus.records) by_id.emplace(r.id, &r);
  std::vector<PreferencePair> pairs;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw ValidationError("prediction for unknown id '" + p.id + "'");
    const QaRecord& record = *it->second;
    if (metrics::score_against_golds(p.prediction, record).em) continue;
    if (metrics::exact_match(p.prediction, record.chosen())) continue;
    pairs.push_back(make_preference_pair(record, p.prediction, "model:" + std::string(to_string(p.half_trained_on))));
  }
  pairs = dedup_pairs(std::move(pairs));
  sort_pairs(pairs);
  return pairs;
}

struct FilterConfig {
  double f1_threshold = 0.9;

  void validate() const {
    if (!(f1_threshold > 0.0 && f1_threshold <= 1.0)) throw ValidationError("F1 threshold must lie in (0, 1]");
  }
};

/// Keeps pairs whose rejected-vs-gold F1 is below the threshold.
inline std::vector<PreferencePair> filter_by_f1(const std::vector<PreferencePair>& pairs, const FilterConfig& config) {
  config.validate();
  std::vector<PreferencePair> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
               [&](const PreferencePair& p) { return p.f1_rejected_vs_gold < config.f1_threshold; });
  return out;
}

inline json prediction_to_json(const PredictionRecord& p) {
  return {{"id", p.id}, {"prediction", p.prediction}, {"half", to_string(p.half_trained_on)}, {"in_train", p.was_in_training_half}};
}

inline PredictionRecord prediction_from_json(const json& j) {
  PredictionRecord p;
  p.id = j.at("id").get<std::string>();
  p.prediction = j.at("prediction").get<std::string>();
  p.half_trained_on = j.value("half", std::string("A")) == "B" ? Half::B : Half::A;
  p.was_in_training_half = j.value("in_train", false);
  return p;
}

}  // namespace mrcdpo::forge
