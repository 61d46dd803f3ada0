#pragma once

// Declarative run configuration. A JSON document selects a preset and
// overrides individual fields; anything not mentioned keeps the preset's
// value.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mrcdpo/digest.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/model_forge.hpp"
#include "mrcdpo/policy.hpp"
#include "mrcdpo/pref_opt.hpp"
#include "mrcdpo/rule_forge.hpp"
#include "mrcdpo/sft.hpp"

namespace mrcdpo {

using json = nlohmann::json;

enum class Preset { toy, paper_parity };

inline std::string_view to_string(Preset p) { return p == Preset::toy ? "toy" : "paper-parity"; }

inline Preset parse_preset(std::string_view s) {
  if (s == "toy") return Preset::toy;
  if (s == "paper-parity" || s == "paper_parity") return Preset::paper_parity;
  throw ValidationError("unknown preset '" + std::string(s) + "' (expected toy or paper-parity)");
}

struct SweepConfig {
  bool enabled = true;
  std::vector<double> thresholds = {0.9, 0.7, 0.5};
  // Training-set sizes as fractions of the smallest thresholded dataset.
  std::vector<double> fractions = {0.25, 0.5, 1.0};
};

struct PipelineConfig {
  Preset preset = Preset::toy;
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::string workdir = "run";
  uint64_t seed = 0;
  rules::RuleConfig rules;
  forge::FilterConfig filter;
  // Which forged pairs train the preference stage: model, rule or both.
  std::string pair_source = "model";
  SftConfig sft;
  pref::LossConfig loss;
  SweepConfig sweep;

  static PipelineConfig with_preset(Preset p) {
    PipelineConfig c;
    c.preset = p;
    c.sft = p == Preset::toy ? SftConfig::toy() : SftConfig::paper_parity();
    c.loss = p == Preset::toy ? pref::LossConfig::toy() : pref::LossConfig::paper_parity();
    return c;
  }

  /// Checks values and that every input path exists.
  void validate() const {
    for (const auto& [name, path] : {std::pair{"train", &train_path}, {"dev", &dev_path}, {"test", &test_path}}) {
      if (path->empty()) throw ValidationError(std::string(name) + " corpus path is not set");
      if (!std::filesystem::exists(*path))
        throw ValidationError(std::string(name) + " corpus '" + *path + "' does not exist");
    }
    if (workdir.empty()) throw ValidationError("workdir is not set");
    rules.validate();
    filter.validate();
    if (pair_source != "model" && pair_source != "rule" && pair_source != "both")
      throw ValidationError("pair_source must be model, rule or both");
    sft.validate();
    loss.validate();
    for (double t : sweep.thresholds)
      if (!(t > 0.0 && t <= 1.0)) throw ValidationError("sweep thresholds must lie in (0, 1]");
    for (double f : sweep.fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ValidationError("sweep fractions must lie in (0, 1]");
  }
};

// -- JSON --------------------------------------------------------------------

inline json to_json(const policy::PolicyOptions& o) {
  return {{"max_span_tokens", o.max_span_tokens},
          {"max_prompt_tokens", o.max_prompt_tokens},
          {"max_target_tokens", o.max_target_tokens},
          {"dim", o.dim}};
}

inline json to_json(const SftConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"patience", c.patience},         {"policy", to_json(c.policy)}};
}

inline json to_json(const pref::LossConfig& c) {
  return {{"loss", pref::to_string(c.kind)},
          {"beta", c.beta},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"micro_batch", c.micro_batch},
          {"accumulation_steps", c.accumulation_steps},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"early_stopping", c.early_stopping}};
}

inline json to_json(const rules::RuleConfig& c) {
  return {{"negatives_per_tuple", c.negatives_per_tuple},
          {"max_random_span_tokens", c.max_random_span_tokens},
          {"max_extension_tokens", c.max_extension_tokens},
          {"global_cap", c.global_cap}};
}

inline json to_json(const PipelineConfig& c) {
  return {{"preset", to_string(c.preset)},
          {"seed", c.seed},
          {"paths", {{"train", c.train_path}, {"dev", c.dev_path}, {"test", c.test_path}, {"workdir", c.workdir}}},
          {"rules", to_json(c.rules)},
          {"filter", {{"f1_threshold", c.filter.f1_threshold}}},
          {"pair_source", c.pair_source},
          {"sft", to_json(c.sft)},
          {"loss", to_json(c.loss)},
          {"sweep", {{"enabled", c.sweep.enabled}, {"thresholds", c.sweep.thresholds}, {"fractions", c.sweep.fractions}}}};
}

namespace detail {

template <typename T>
void read(const json& j, std::string_view key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config field '" + std::string(key) + "': " + e.what());
  }
}

inline void require_object(const json& j, std::string_view what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
}

}  // namespace detail

inline void apply(const json& j, policy::PolicyOptions& o) {
  detail::require_object(j, "policy");
  detail::read(j, "max_span_tokens", o.max_span_tokens);
  detail::read(j, "max_prompt_tokens", o.max_prompt_tokens);
  detail::read(j, "max_target_tokens", o.max_target_tokens);
  detail::read(j, "dim", o.dim);
}

inline void apply(const json& j, SftConfig& c) {
  detail::require_object(j, "sft");
  detail::read(j, "learning_rate", c.learning_rate);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "batch_size", c.batch_size);
  detail::read(j, "max_epochs", c.max_epochs);
  detail::read(j, "patience", c.patience);
  if (j.contains("policy")) apply(j["policy"], c.policy);
}

inline void apply(const json& j, pref::LossConfig& c) {
  detail::require_object(j, "loss");
  if (j.contains("loss")) c.kind = pref::parse_loss_kind(j["loss"].get<std::string>());
  detail::read(j, "beta", c.beta);
  detail::read(j, "learning_rate", c.learning_rate);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "micro_batch", c.micro_batch);
  detail::read(j, "accumulation_steps", c.accumulation_steps);
  detail::read(j, "max_epochs", c.max_epochs);
  detail::read(j, "patience", c.patience);
  detail::read(j, "early_stopping", c.early_stopping);
}

inline void apply(const json& j, rules::RuleConfig& c) {
  detail::require_object(j, "rules");
  detail::read(j, "negatives_per_tuple", c.negatives_per_tuple);
  detail::read(j, "max_random_span_tokens", c.max_random_span_tokens);
  detail::read(j, "max_extension_tokens", c.max_extension_tokens);
  detail::read(j, "global_cap", c.global_cap);
}

/// Builds a config from a JSON document: the preset first, then overrides.
inline PipelineConfig config_from_json(const json& j) {
  detail::require_object(j, "config");
  auto c = PipelineConfig::with_preset(parse_preset(j.value("preset", std::string("toy"))));
  detail::read(j, "seed", c.seed);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::require_object(p, "paths");
    detail::read(p, "train", c.train_path);
    detail::read(p, "dev", c.dev_path);
    detail::read(p, "test", c.test_path);
    detail::read(p, "workdir", c.workdir);
  }
  if (j.contains("rules")) apply(j["rules"], c.rules);
  if (j.contains("filter")) {
    detail::require_object(j["filter"], "filter");
    detail::read(j["filter"], "f1_threshold", c.filter.f1_threshold);
  }
  detail::read(j, "pair_source", c.pair_source);
  if (j.contains("sft")) apply(j["sft"], c.sft);
  if (j.contains("loss")) apply(j["loss"], c.loss);
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    detail::require_object(s, "sweep");
    detail::read(s, "enabled", c.sweep.enabled);
    detail::read(s, "thresholds", c.sweep.thresholds);
    detail::read(s, "fractions", c.sweep.fractions);
  }
  return c;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline PipelineConfig load_config(const std::string& path) { return config_from_json(load_json_file(path)); }

/// Digest of everything that influences outputs. The workdir is excluded
/// so the same run in two directories shares a digest.
inline std::string config_digest(const PipelineConfig& c) {
  json j = to_json(c);
  j["paths"].erase("workdir");
  return sha256_hex(j.dump());
}

}  // namespace mrcdpo
