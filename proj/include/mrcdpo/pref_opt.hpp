#pragma once

// Preference modelling and preference optimization: Bradley-Terry
// probability, reward-model loss, KL-shaped reward, and the DPO / IPO /
// RSO-hinge losses trained against a frozen reference policy.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/optim.hpp"
#include "mrcdpo/pairs.hpp"
#include "mrcdpo/policy.hpp"
#include "mrcdpo/sft.hpp"

namespace mrcdpo::pref {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Bradley-Terry probability that the first response is preferred.
inline double bt_preference_prob(double r_w, double r_l) { return sigmoid(r_w - r_l); }

/// Reward penalized by the policy's log-ratio against the reference.
inline double kl_shaped_reward(double r_sigma_xy, double beta, double logp_theta, double logp_ref) {
  return r_sigma_xy - beta * (logp_theta - logp_ref);
}

struct PairLogps {
  double theta_w = 0.0;
  double ref_w = 0.0;
  double theta_l = 0.0;
  double ref_l = 0.0;

  double margin() const { return (theta_w - ref_w) - (theta_l - ref_l); }
  bool finite() const {
    return std::isfinite(theta_w) && std::isfinite(ref_w) && std::isfinite(theta_l) && std::isfinite(ref_l);
  }
};

/// -log sigma(beta h) = log(1 + exp(-beta h)).
inline double dpo_loss(const PairLogps& lp, double beta) { return softplus(-beta * lp.margin()); }

/// (h - 1/(2 beta))^2
inline double ipo_loss(const PairLogps& lp, double beta) {
  const double d = lp.margin() - 1.0 / (2.0 * beta);
  return d * d;
}

/// max(0, 1 - beta h)
inline double rso_hinge_loss(const PairLogps& lp, double beta) { return std::max(0.0, 1.0 - beta * lp.margin()); }

enum class LossKind { dpo, ipo, rso_hinge };

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "dpo") return LossKind::dpo;
  if (s == "ipo") return LossKind::ipo;
  if (s == "rso" || s == "rso_hinge") return LossKind::rso_hinge;
  throw ValidationError("unknown loss '" + std::string(s) + "' (expected dpo, ipo or rso)");
}

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::dpo: return "dpo";
    case LossKind::ipo: return "ipo";
    case LossKind::rso_hinge: return "rso";
  }
  return "dpo";
}

inline double preference_loss(LossKind kind, const PairLogps& lp, double beta) {
  switch (kind) {
    case LossKind::dpo: return dpo_loss(lp, beta);
    case LossKind::ipo: return ipo_loss(lp, beta);
    case LossKind::rso_hinge: return rso_hinge_loss(lp, beta);
  }
  return 0.0;
}

/// d loss / d margin.
inline double preference_loss_slope(LossKind kind, double margin, double beta) {
  switch (kind) {
    case LossKind::dpo: return -beta * sigmoid(-beta * margin);
    case LossKind::ipo: return 2.0 * (margin - 1.0 / (2.0 * beta));
    case LossKind::rso_hinge: return beta * margin < 1.0 ? -beta : 0.0;
  }
  return 0.0;
}

struct LossConfig {
  LossKind kind = LossKind::dpo;
  double beta = 0.1;
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  int micro_batch = 16;
  int accumulation_steps = 1;
  int max_epochs = 20;
  int patience = 5;
  // When false, every epoch runs and the last epoch's policy is returned.
  bool early_stopping = true;

  int batch_size() const { return micro_batch * accumulation_steps; }

  static LossConfig paper_parity() {
    LossConfig c;
    c.learning_rate = 5e-7;
    c.micro_batch = 2;
    c.accumulation_steps = 8;
    return c;
  }
  static LossConfig toy() { return {}; }

  void validate() const {
    if (!(beta > 0.0)) throw ValidationError("beta must be > 0");
    if (!(learning_rate > 0.0) || weight_decay < 0.0 || micro_batch < 1 || accumulation_steps < 1 ||
        patience < 1 || max_epochs < 0)
      throw ValidationError("invalid preference-optimization config");
  }
};

// -- Resolved pairs -------------------------------------------------------

/// Pairs grouped onto featurized prompts, with chosen/rejected resolved
/// to candidate indices.
struct PreferenceData {
  struct Item {
    std::size_t example;
    std::size_t chosen;
    std::size_t rejected;
    std::string id;
  };
  std::vector<policy::Example> examples;
  std::vector<Item> items;
};

inline PreferenceData resolve_pairs(const std::vector<PreferencePair>& pairs, const policy::PolicyOptions& options) {
  PreferenceData data;
  std::map<std::string, std::size_t> by_prompt;
  for (const auto& p : pairs) {
    auto [it, fresh] = by_prompt.emplace(p.prompt, data.examples.size());
    if (fresh) data.examples.push_back(policy::make_example(Prompt{p.prompt}, options));
    auto& ex = data.examples[it->second];
    const auto w = ex.ensure(p.chosen);
    const auto l = ex.ensure(p.rejected);
    if (!w || !l)
      throw ValidationError("pair '" + p.id + "': " + (w ? "rejected" : "chosen") +
                            " answer is not a candidate of its prompt");
    if (*w == *l) throw ValidationError("pair '" + p.id + "': chosen and rejected are the same candidate");
    data.items.push_back({it->second, *w, *l, p.id});
  }
  return data;
}

// -- Reward model ----------------------------------------------------------

struct RewardParams {
  std::vector<double> weights;
  static RewardParams zeros(std::size_t dim = policy::kDefaultDim) { return {std::vector<double>(dim, 0.0)}; }
};

/// Mean -log p(y_w > y_l | x) under r(x, y) = v . phi(x, y); gradient is
/// added to `grad` when non-null.
inline double reward_model_loss(const RewardParams& params, const PreferenceData& data,
                                std::vector<double>* grad = nullptr) {
  if (data.items.empty()) throw ValidationError("reward_model_loss needs at least one pair");
  const double scale = 1.0 / static_cast<double>(data.items.size());
  double total = 0.0;
  for (const auto& item : data.items) {
    const auto& ex = data.examples[item.example];
    const auto scores = ex.scores(params.weights);
    const double gap = scores[item.chosen] - scores[item.rejected];
    total += softplus(-gap);
    if (grad) {
      std::vector<double> coef(ex.size(), 0.0);
      const double slope = -sigmoid(-gap) * scale;
      coef[item.chosen] += slope;
      coef[item.rejected] -= slope;
      ex.accumulate(coef, *grad);
    }
  }
  return total * scale;
}

inline double reward_model_loss(const RewardParams& params, const std::vector<PreferencePair>& pairs,
                                const policy::PolicyOptions& options = {}) {
  policy::PolicyOptions opts = options;
  opts.dim = params.weights.size();
  return reward_model_loss(params, resolve_pairs(pairs, opts));
}

// -- Preference optimization ----------------------------------------------

/// Loss of one resolved pair under `theta` with cached reference log-probs,
/// and (optionally) its gradient scaled by `scale`.
inline double pair_objective(LossKind kind, double beta, const std::vector<double>& theta,
                             const policy::Example& ex, std::size_t chosen, std::size_t rejected,
                             double ref_w, double ref_l, double scale, std::vector<double>* grad,
                             double* margin_out = nullptr) {
  const auto logp = policy::log_softmax(ex.scores(theta));
  const PairLogps lp{logp[chosen], ref_w, logp[rejected], ref_l};
  if (!lp.finite()) throw RuntimeFailure("non-finite log-probability in preference pair");
  const double h = lp.margin();
  if (margin_out) *margin_out = h;
  if (grad) {
    // d h / d theta = phi(y_w) - phi(y_l): the softmax expectations cancel.
    const double slope = preference_loss_slope(kind, h, beta) * scale;
    if (slope != 0.0) {
      std::vector<double> coef(ex.size(), 0.0);
      coef[chosen] += slope;
      coef[rejected] -= slope;
      ex.accumulate(coef, *grad);
    }
  }
  return preference_loss(kind, lp, beta);
}

struct ReferenceLogps {
  std::vector<double> chosen;
  std::vector<double> rejected;
};

inline ReferenceLogps reference_logps(const policy::PolicyParams& reference, const PreferenceData& data) {
  ReferenceLogps out;
  out.chosen.reserve(data.items.size());
  out.rejected.reserve(data.items.size());
  std::vector<std::vector<double>> cache(data.examples.size());
  for (const auto& item : data.items) {
    auto& logp = cache[item.example];
    if (logp.empty()) logp = policy::log_softmax(data.examples[item.example].scores(reference.weights));
    out.chosen.push_back(logp[item.chosen]);
    out.rejected.push_back(logp[item.rejected]);
  }
  return out;
}

/// Mean preference loss over `batch` (and its gradient).
inline double preference_batch_loss(const LossConfig& config, const std::vector<double>& theta,
                                    const PreferenceData& data, const ReferenceLogps& ref,
                                    const std::vector<std::size_t>& batch, std::vector<double>* grad,
                                    double* mean_margin = nullptr) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0, margins = 0.0;
  for (std::size_t i : batch) {
    const auto& item = data.items[i];
    double h = 0.0;
    total += pair_objective(config.kind, config.beta, theta, data.examples[item.example], item.chosen,
                            item.rejected, ref.chosen[i], ref.rejected[i], scale, grad, &h);
    margins += h;
  }
  if (mean_margin) *mean_margin = margins * scale;
  return total * scale;
}

/// Trains pi_theta from `sft` on preference pairs; pi_ref is a frozen copy
/// of `sft`. Epoch 0 (the SFT policy itself) takes part in best-dev-F1
/// selection, so a run never returns a policy worse on dev than its start.
inline TrainResult dpo_train(const policy::PolicyParams& sft, const std::vector<PreferencePair>& pairs,
                             const Corpus& dev, const LossConfig& config, uint64_t seed) {
  config.validate();
  const policy::PolicyParams reference = sft;
  const auto data = resolve_pairs(pairs, reference.options);
  const auto ref = reference_logps(reference, data);
  const auto dev_examples = policy::make_examples(dev, reference.options);

  TrainResult result;
  result.params = sft;
  policy::PolicyParams current = sft;
  current.seed = seed;
  {
    const auto report = evaluate_policy(current, dev_examples, dev);
    result.best_dev_f1 = report.f1;
    result.log.push_back({0, 0.0, 0.0, report.em, report.f1});
  }
  if (data.items.empty() || config.max_epochs == 0) return result;

  AdamW optimizer(current.weights.size(), {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  std::vector<double> grad(current.weights.size());
  std::vector<std::size_t> order(data.items.size());
  std::iota(order.begin(), order.end(), 0);
  const auto micro = static_cast<std::size_t>(config.micro_batch);

  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng(derive_seed(seed, "pref-epoch-" + std::to_string(epoch)));
    rng.shuffle(std::span(order));
    double loss_sum = 0.0, margin_sum = 0.0;
    std::size_t pending = 0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t b = 0; b < order.size(); b += micro) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + micro)));
      std::vector<double> micro_grad(grad.size(), 0.0);
      double margin = 0.0;
      const double loss = preference_batch_loss(config, current.weights, data, ref, batch, &micro_grad, &margin);
      if (!std::isfinite(loss)) {
        std::string ids;
        for (std::size_t i : batch) ids += (ids.empty() ? "" : ",") + data.items[i].id;
        throw RuntimeFailure("non-finite preference loss in epoch " + std::to_string(epoch) + " batch [" + ids + "]");
      }
      const auto n = static_cast<double>(batch.size());
      loss_sum += loss * n;
      margin_sum += margin * n;
      const double w = 1.0 / static_cast<double>(config.accumulation_steps);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += w * micro_grad[k];
      if (++pending == static_cast<std::size_t>(config.accumulation_steps) || b + micro >= order.size()) {
        optimizer.step(current.weights, grad);
        std::fill(grad.begin(), grad.end(), 0.0);
        pending = 0;
      }
    }
    const auto report = evaluate_policy(current, dev_examples, dev);
    const auto n = static_cast<double>(order.size());
    result.log.push_back({epoch, loss_sum / n, margin_sum / n, report.em, report.f1});
    spdlog::debug("{} epoch {} loss {:.4f} margin {:.4f} dev f1 {:.2f}", to_string(config.kind), epoch,
                  loss_sum / n, margin_sum / n, report.f1);
    if (!config.early_stopping) {
      result.best_dev_f1 = report.f1;
      result.best_epoch = epoch;
      result.params = current;
    } else if (report.f1 > result.best_dev_f1) {
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

}  // namespace mrcdpo::pref
