#pragma once

// Supervised fine-tuning of the answer policy: maximum likelihood of the
// gold candidate with AdamW, early stopping on dev F1.

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"
#include "mrcdpo/optim.hpp"
#include "mrcdpo/policy.hpp"
#include "mrcdpo/rng.hpp"

namespace mrcdpo {

struct SftConfig {
  double learning_rate = 0.1;
  double weight_decay = 0.01;
  int batch_size = 16;
  int max_epochs = 50;
  int patience = 5;
  policy::PolicyOptions policy;

  /// Hyperparameters published for the 770M-3B seq2seq models.
  static SftConfig paper_parity() {
    SftConfig c;
    c.learning_rate = 5e-5;
    return c;
  }
  static SftConfig toy() { return {}; }

  void validate() const {
    if (!(learning_rate > 0.0) || weight_decay < 0.0 || batch_size < 1 || patience < 1 || max_epochs < 0)
      throw ValidationError("invalid SFT config: rates must be positive, batch size and patience >= 1");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double mean_margin = 0.0;  // preference training only
  double dev_em = 0.0;
  double dev_f1 = 0.0;
};

struct TrainResult {
  policy::PolicyParams params;
  std::vector<EpochStats> log;
  int best_epoch = 0;
  double best_dev_f1 = 0.0;
};

/// Training view of a record: its featurized prompt with the gold
/// candidate injected if enumeration missed it.
struct SupervisedExample {
  std::string id;
  policy::Example example;
  std::size_t gold = 0;
};

inline std::vector<SupervisedExample> make_supervised(const Corpus& corpus, const policy::PolicyOptions& options) {
  std::vector<SupervisedExample> out;
  out.reserve(corpus.size());
  std::size_t skipped = 0;
  for (const auto& r : corpus.records) {
    auto ex = policy::make_example(r, options);
    std::optional<std::size_t> gold = 0;
    if (r.is_answerable) gold = ex.ensure(r.chosen(), r.gold_answers.front().byte_start);
    if (!gold) {
      ++skipped;
      continue;
    }
    out.push_back({r.id, std::move(ex), *gold});
  }
  if (skipped) spdlog::warn("{} training records skipped: gold answer lies outside the truncated prompt", skipped);
  return out;
}

/// Mean negative log-likelihood of the gold candidates over `batch`, and
/// its gradient (added to `grad` when non-null).
inline double sft_loss(const std::vector<double>& w, const std::vector<SupervisedExample>& data,
                       const std::vector<std::size_t>& batch, std::vector<double>* grad) {
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    const auto& ex = data[i];
    const auto logp = policy::log_softmax(ex.example.scores(w));
    total -= logp[ex.gold];
    if (grad) {
      std::vector<double> coef(logp.size());
      for (std::size_t k = 0; k < logp.size(); ++k) coef[k] = scale * std::exp(logp[k]);
      coef[ex.gold] -= scale;
      ex.example.accumulate(coef, *grad);
    }
  }
  return total * scale;
}

inline metrics::EvalReport evaluate_policy(const policy::PolicyParams& params,
                                           const std::vector<policy::Example>& examples, const Corpus& corpus) {
  return metrics::evaluate(policy::predict_corpus(params, examples, corpus), corpus);
}

inline TrainResult sft_train(const Corpus& train, const Corpus& dev, const SftConfig& config, uint64_t seed) {
  config.validate();
  if (train.empty() || dev.empty()) throw ValidationError("sft_train needs nonempty train and dev corpora");
  const auto data = make_supervised(train, config.policy);
  if (data.empty()) throw ValidationError("no usable training records");
  const auto dev_examples = policy::make_examples(dev, config.policy);

  TrainResult result;
  result.params = policy::PolicyParams::zeros(config.policy, seed);
  result.best_dev_f1 = -1.0;
  policy::PolicyParams current = result.params;
  AdamW optimizer(config.policy.dim, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  std::vector<double> grad(config.policy.dim);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng(derive_seed(seed, "sft-epoch-" + std::to_string(epoch)));
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + config.batch_size)));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = sft_loss(current.weights, data, batch, &grad);
      if (!std::isfinite(loss)) {
        std::string ids;
        for (std::size_t i : batch) ids += (ids.empty() ? "" : ",") + data[i].id;
        throw RuntimeFailure("non-finite SFT loss in epoch " + std::to_string(epoch) + " batch [" + ids + "]");
      }
      loss_sum += loss * static_cast<double>(batch.size());
      optimizer.step(current.weights, grad);
    }
    const auto report = evaluate_policy(current, dev_examples, dev);
    result.log.push_back({epoch, loss_sum / static_cast<double>(data.size()), 0.0, report.em, report.f1});
    spdlog::debug("sft epoch {} loss {:.4f} dev em {:.2f} f1 {:.2f}", epoch, result.log.back().train_loss,
                  report.em, report.f1);
    if (report.f1 > result.best_dev_f1) {
      result.best_dev_f1 = report.f1;
      result.best_epoch = epoch;
      result.params = current;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace mrcdpo
