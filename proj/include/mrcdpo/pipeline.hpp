#pragma once

// End-to-end run: ingest -> forge -> filter -> sft -> dpo -> evaluate ->
// report. Every stage writes its artifacts under the workdir with a
// `.meta.json` sidecar naming the seed and config digest; the manifest
// lists input and output digests so two runs can be compared by hash.

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "mrcdpo/config.hpp"
#include "mrcdpo/corpus.hpp"
#include "mrcdpo/digest.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"
#include "mrcdpo/model_forge.hpp"
#include "mrcdpo/pairs.hpp"
#include "mrcdpo/policy.hpp"
#include "mrcdpo/pref_opt.hpp"
#include "mrcdpo/rule_forge.hpp"
#include "mrcdpo/sft.hpp"
#include "mrcdpo/sweep.hpp"

namespace mrcdpo {

namespace fs = std::filesystem;

struct StageRecord {
  std::string name;
  std::string status;  // "ok" or "failed"
  double seconds = 0.0;
  json metrics = json::object();
};

struct RunManifest {
  json config;
  std::string config_sha256;
  uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // workdir-relative path -> sha256
  std::vector<StageRecord> stages;
  std::string failed_stage;
  std::string error;
  double wall_clock_seconds = 0.0;

  bool ok() const { return failed_stage.empty(); }

  json to_json() const {
    json stage_rows = json::array();
    for (const auto& s : stages)
      stage_rows.push_back({{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}, {"metrics", s.metrics}});
    json out = {{"config", config},
                {"config_sha256", config_sha256},
                {"seed", seed},
                {"inputs", inputs},
                {"outputs", outputs},
                {"stages", stage_rows},
                {"wall_clock_seconds", wall_clock_seconds},
                {"status", ok() ? "ok" : "failed"}};
    if (!ok()) {
      out["failed_stage"] = failed_stage;
      out["error"] = error;
    }
    return out;
  }
};

/// Comparison rows: one per policy, dev and test EM/F1 (x100, 2 dp).
struct ComparisonRow {
  std::string model;
  metrics::EvalReport dev;
  metrics::EvalReport test;
};

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "model,dev_em,dev_f1,test_em,test_f1\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,%.2f,%.2f\n", r.model.c_str(), r.dev.em, r.dev.f1, r.test.em,
                  r.test.f1);
    out += buf;
  }
  return out;
}

inline std::string comparison_markdown(const std::vector<ComparisonRow>& rows) {
  std::string out = "| Model | Dev EM | Dev F1 | Test EM | Test F1 |\n|---|---:|---:|---:|---:|\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %.2f | %.2f | %.2f | %.2f |\n", r.model.c_str(), r.dev.em, r.dev.f1,
                  r.test.em, r.test.f1);
    out += buf;
  }
  return out;
}

inline json comparison_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"model", r.model},
                   {"dev", {{"exact", metrics::round2(r.dev.em)}, {"f1", metrics::round2(r.dev.f1)}}},
                   {"test", {{"exact", metrics::round2(r.test.em)}, {"f1", metrics::round2(r.test.f1)}}}});
  return out;
}

inline std::string epoch_log_jsonl(const std::vector<EpochStats>& log) {
  return to_jsonl(log, [](const EpochStats& e) {
    return json{{"epoch", e.epoch},
                {"train_loss", e.train_loss},
                {"mean_margin", e.mean_margin},
                {"dev_em", e.dev_em},
                {"dev_f1", e.dev_f1}};
  });
}

/// Predictions sorted by id, A before B.
inline std::string predictions_jsonl(std::vector<forge::PredictionRecord> predictions) {
  std::stable_sort(predictions.begin(), predictions.end(), [](const auto& a, const auto& b) {
    return std::tie(a.id, a.half_trained_on) < std::tie(b.id, b.half_trained_on);
  });
  return to_jsonl(predictions, forge::prediction_to_json);
}

inline std::string answers_jsonl(const std::unordered_map<std::string, std::string>& answers) {
  std::map<std::string, std::string> sorted(answers.begin(), answers.end());
  std::string out;
  for (const auto& [id, text] : sorted) out += json{{"id", id}, {"prediction", text}}.dump() + "\n";
  return out;
}

/// Writes artifacts under one workdir and records their digests.
class ArtifactWriter {
 public:
  ArtifactWriter(fs::path root, RunManifest& manifest) : root_(std::move(root)), manifest_(manifest) {}

  void text(const std::string& rel, const std::string& content, const std::string& stage) {
    const auto path = prepare(rel);
    write_text(path.string(), content);
    manifest_.outputs[rel] = sha256_hex(content);
    sidecar(rel, stage, sha256_hex(content));
  }

  void params(const std::string& rel, const policy::PolicyParams& p, const std::string& stage) {
    const auto path = prepare(rel);
    save_params(p, path.string(), {{"config_sha256", manifest_.config_sha256}, {"stage", stage},
                                   {"run_seed", manifest_.seed}});
    manifest_.outputs[rel] = file_sha256(path.string());
    manifest_.outputs[rel + ".json"] = file_sha256(path.string() + ".json");
  }

  fs::path path(const std::string& rel) const { return root_ / rel; }

 private:
  fs::path prepare(const std::string& rel) {
    const auto path = root_ / rel;
    fs::create_directories(path.parent_path());
    return path;
  }

  void sidecar(const std::string& rel, const std::string& stage, const std::string& sha) {
    const json meta = {{"seed", manifest_.seed},
                       {"config_sha256", manifest_.config_sha256},
                       {"stage", stage},
                       {"sha256", sha}};
    const std::string content = meta.dump(2) + "\n";
    write_text(prepare(rel + ".meta.json").string(), content);
    manifest_.outputs[rel + ".meta.json"] = sha256_hex(content);
  }

  fs::path root_;
  RunManifest& manifest_;
};

inline void write_manifest(const RunManifest& manifest, const fs::path& workdir) {
  fs::create_directories(workdir);
  write_text((workdir / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
}

/// Everything a finished run produced, for callers that want more than
/// the files (tests, the acceptance suite).
struct PipelineResult {
  RunManifest manifest;
  TrainResult sft;
  TrainResult dpo;
  std::vector<ComparisonRow> comparison;
  std::vector<CountRow> counts;
  SweepReport sweep;
};

inline PipelineResult run_pipeline_detailed(const PipelineConfig& config) {
  config.validate();
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const fs::path workdir(config.workdir);

  PipelineResult out;
  RunManifest& manifest = out.manifest;
  manifest.config = to_json(config);
  manifest.config_sha256 = config_digest(config);
  manifest.seed = config.seed;
  ArtifactWriter writer(workdir, manifest);

  auto stage = [&](const std::string& name, auto&& body) {
    const auto t0 = clock::now();
    StageRecord record{name, "ok", 0.0, json::object()};
    spdlog::info("stage {}", name);
    try {
      body(record.metrics);
    } catch (const std::exception& e) {
      record.status = "failed";
      record.seconds = std::chrono::duration<double>(clock::now() - t0).count();
      manifest.stages.push_back(record);
      manifest.failed_stage = name;
      manifest.error = e.what();
      manifest.wall_clock_seconds = std::chrono::duration<double>(clock::now() - started).count();
      write_manifest(manifest, workdir);
      const std::string msg = "stage '" + name + "' failed: " + e.what();
      if (dynamic_cast<const ValidationError*>(&e)) throw ValidationError(msg);
      throw RuntimeFailure(msg);
    }
    record.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    manifest.stages.push_back(record);
  };

  Corpus train, dev, test;
  stage("ingest", [&](json& m) {
    for (const auto& p : {config.train_path, config.dev_path, config.test_path}) manifest.inputs[p] = file_sha256(p);
    train = load_corpus(config.train_path, Split::train);
    dev = load_corpus(config.dev_path, Split::dev);
    test = load_corpus(config.test_path, Split::test);
    auto unanswerable = [](const Corpus& c) {
      return std::count_if(c.records.begin(), c.records.end(), [](const QaRecord& r) { return !r.is_answerable; });
    };
    m = {{"train", train.size()}, {"dev", dev.size()}, {"test", test.size()},
         {"train_unanswerable", unanswerable(train)}, {"train_contexts", distinct_contexts(train).size()}};
  });

  std::vector<PreferencePair> rule_pairs, model_pairs;
  stage("forge_rules", [&](json& m) {
    auto rc = config.rules;
    rc.seed = derive_seed(config.seed, "rules");
    rule_pairs = rules::forge_rules(train, rc);
    writer.text("forge/rule_pairs.jsonl", pairs_to_jsonl(rule_pairs), "forge_rules");
    m = {{"pairs", rule_pairs.size()}};
  });

  stage("forge_model", [&](json& m) {
    const auto split = forge::split_half_predict(train, {config.sft, dev}, derive_seed(config.seed, "forge"));
    model_pairs = forge::collect_incorrect(split.predictions, train);
    writer.text("forge/predictions.jsonl", predictions_jsonl(split.predictions), "forge_model");
    writer.text("forge/model_pairs.jsonl", pairs_to_jsonl(model_pairs), "forge_model");
    m = {{"predictions", split.predictions.size()},
         {"pairs", model_pairs.size()},
         {"half_a_dev_f1", split.model_a.best_dev_f1},
         {"half_b_dev_f1", split.model_b.best_dev_f1}};
  });

  std::vector<double> thresholds = config.sweep.thresholds;
  if (std::find(thresholds.begin(), thresholds.end(), config.filter.f1_threshold) == thresholds.end())
    thresholds.push_back(config.filter.f1_threshold);
  std::sort(thresholds.rbegin(), thresholds.rend());
  std::map<double, std::vector<PreferencePair>> model_by_threshold;
  std::vector<PreferencePair> training_pairs;
  stage("filter", [&](json& m) {
    for (double t : thresholds) {
      const auto tag = format_threshold(t);
      model_by_threshold[t] = forge::filter_by_f1(model_pairs, {t});
      writer.text("filter/model_pairs_t" + tag + ".jsonl", pairs_to_jsonl(model_by_threshold[t]), "filter");
      writer.text("filter/rule_pairs_t" + tag + ".jsonl", pairs_to_jsonl(forge::filter_by_f1(rule_pairs, {t})),
                  "filter");
    }
    out.counts = count_table(rule_pairs, model_pairs, thresholds);
    writer.text("report/pair_counts.csv", count_table_csv(out.counts), "filter");
    writer.text("report/pair_counts.json", count_table_json(out.counts).dump(2) + "\n", "filter");

    if (config.pair_source != "rule") training_pairs = model_by_threshold[config.filter.f1_threshold];
    if (config.pair_source != "model") {
      for (auto& p : forge::filter_by_f1(rule_pairs, config.filter)) training_pairs.push_back(std::move(p));
      training_pairs = dedup_pairs(std::move(training_pairs));
      sort_pairs(training_pairs);
    }
    m = {{"threshold", config.filter.f1_threshold}, {"training_pairs", training_pairs.size()},
         {"counts", count_table_json(out.counts)}};
  });

  stage("sft", [&](json& m) {
    out.sft = sft_train(train, dev, config.sft, derive_seed(config.seed, "sft"));
    writer.params("sft/policy.bin", out.sft.params, "sft");
    writer.text("sft/log.jsonl", epoch_log_jsonl(out.sft.log), "sft");
    m = {{"best_epoch", out.sft.best_epoch}, {"best_dev_f1", out.sft.best_dev_f1}, {"epochs", out.sft.log.size()}};
  });

  stage("dpo", [&](json& m) {
    out.dpo = pref::dpo_train(out.sft.params, training_pairs, dev, config.loss, derive_seed(config.seed, "dpo"));
    writer.params("dpo/policy.bin", out.dpo.params, "dpo");
    writer.text("dpo/log.jsonl", epoch_log_jsonl(out.dpo.log), "dpo");
    m = {{"loss", pref::to_string(config.loss.kind)},
         {"pairs", training_pairs.size()},
         {"best_epoch", out.dpo.best_epoch},
         {"best_dev_f1", out.dpo.best_dev_f1}};
  });

  stage("evaluate", [&](json& m) {
    const auto dev_examples = policy::make_examples(dev, config.sft.policy);
    const auto test_examples = policy::make_examples(test, config.sft.policy);
    const std::string dpo_name = std::string(pref::to_string(config.loss.kind)) + "-" + config.pair_source;
    for (const auto& [name, params] : {std::pair{std::string("sft"), &out.sft.params}, {dpo_name, &out.dpo.params}}) {
      ComparisonRow row{name, {}, {}};
      for (const auto& [split, corpus, examples] :
           {std::tuple{"dev", &dev, &dev_examples}, std::tuple{"test", &test, &test_examples}}) {
        const auto answers = policy::predict_corpus(*params, *examples, *corpus);
        const auto report = metrics::evaluate(answers, *corpus);
        const std::string stem = std::string(name == "sft" ? "sft" : "dpo") + "_" + split;
        writer.text("eval/" + stem + "_predictions.jsonl", answers_jsonl(answers), "evaluate");
        writer.text("eval/" + stem + ".json", metrics::report_to_json(report).dump(2) + "\n", "evaluate");
        (std::string_view(split) == "dev" ? row.dev : row.test) = report;
        m[stem] = {{"exact", metrics::round2(report.em)}, {"f1", metrics::round2(report.f1)}};
      }
      out.comparison.push_back(std::move(row));
    }
  });

  stage("report", [&](json& m) {
    writer.text("report/comparison.csv", comparison_csv(out.comparison), "report");
    writer.text("report/comparison.json", comparison_json(out.comparison).dump(2) + "\n", "report");
    writer.text("report/comparison.md", comparison_markdown(out.comparison), "report");
    if (config.sweep.enabled && (config.sweep.thresholds.size() >= 2 || config.sweep.fractions.size() >= 2)) {
      std::map<double, std::vector<PreferencePair>> sweep_sets;
      for (double t : config.sweep.thresholds) sweep_sets[t] = model_by_threshold[t];
      out.sweep = run_threshold_sweep(out.sft.params, sweep_sets, config.sweep.fractions, dev, test, config.loss,
                                      derive_seed(config.seed, "sweep"));
      writer.text("report/sweep.csv", sweep_csv(out.sweep), "report");
      writer.text("report/sweep.json", sweep_json(out.sweep).dump(2) + "\n", "report");
      m["sweep_cells"] = out.sweep.rows.size();
    }
    m["rows"] = out.comparison.size();
  });

  manifest.wall_clock_seconds = std::chrono::duration<double>(clock::now() - started).count();
  write_manifest(manifest, workdir);
  return out;
}

inline RunManifest run_pipeline(const PipelineConfig& config) { return run_pipeline_detailed(config).manifest; }

/// Digest over all output digests; equal for byte-identical runs.
inline std::string outputs_digest(const RunManifest& manifest) {
  std::string joined;
  for (const auto& [path, sha] : manifest.outputs) joined += path + "\t" + sha + "\n";
  return sha256_hex(joined);
}

}  // namespace mrcdpo
