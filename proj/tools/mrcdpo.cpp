// mrcdpo: command-line front end for the preference-optimization pipeline.
//
// Exit codes: 0 success, 1 validation error (bad input, config or flags),
// 2 runtime failure.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mrcdpo/config.hpp"
#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"
#include "mrcdpo/model_forge.hpp"
#include "mrcdpo/pairs.hpp"
#include "mrcdpo/pipeline.hpp"
#include "mrcdpo/policy.hpp"
#include "mrcdpo/pref_opt.hpp"
#include "mrcdpo/rule_forge.hpp"
#include "mrcdpo/sft.hpp"
#include "mrcdpo/sweep.hpp"
#include "mrcdpo/synthetic.hpp"

using namespace mrcdpo;

namespace {

// Options shared by commands that read a config file.
struct Common {
  std::string config_path;
  std::optional<std::string> preset;
  uint64_t seed = 0;

  PipelineConfig load() const {
    if (config_path.empty()) return PipelineConfig::with_preset(preset ? parse_preset(*preset) : Preset::toy);
    json raw = load_json_file(config_path);
    if (preset) raw["preset"] = *preset;
    return config_from_json(raw);
  }
};

void add_config(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", common.preset, "toy or paper-parity");
}

void add_seed(CLI::App* cmd, Common& common) {
  cmd->add_option("--seed", common.seed, "random seed")->required();
}

void write_or_print(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") std::cout << content;
  else write_text(path, content);
}

std::unordered_map<std::string, std::string> load_predictions(const std::string& path) {
  std::unordered_map<std::string, std::string> out;
  const std::string content = read_file(path);
  const auto first = content.find_first_not_of(" \t\r\n");
  // A single JSON object is a SQuAD-style {id: answer} map; otherwise JSONL.
  if (first != std::string::npos && content[first] == '{' && content.find("\n{", first) == std::string::npos) {
    json j;
    try {
      j = json::parse(content);
    } catch (const json::parse_error& e) {
      throw ValidationError(path + ": " + e.what());
    }
    if (!j.contains("id")) {
      for (const auto& [id, v] : j.items()) out[id] = v.get<std::string>();
      return out;
    }
  }
  for (const auto& row : read_jsonl(path)) out[row.at("id").get<std::string>()] = row.at("prediction").get<std::string>();
  return out;
}

std::vector<double> parse_list(const std::vector<double>& xs, const char* what) {
  if (xs.empty()) throw ValidationError(std::string(what) + " list is empty");
  return xs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference optimization for extractive reading comprehension"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  Common common;
  std::function<void()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Corpus utilities");
  ingest->require_subcommand(1);
  std::vector<std::string> corpora;
  std::string split_name = "train";
  auto* validate = ingest->add_subcommand("validate", "Check SQuAD-format corpora against every record invariant");
  validate->add_option("corpus", corpora, "corpus files")->required()->check(CLI::ExistingFile);
  validate->add_option("--split", split_name, "split label");
  validate->callback([&] {
    action = [&] {
      const Split split = parse_split(split_name);
      for (const auto& path : corpora) {
        const Corpus c = load_corpus(path, split);
        const auto unanswerable = std::count_if(c.records.begin(), c.records.end(),
                                                [](const QaRecord& r) { return !r.is_answerable; });
        std::printf("%s: %zu records, %zu contexts, %td unanswerable\n", path.c_str(), c.size(),
                    distinct_contexts(c).size(), unanswerable);
      }
    };
  });

  std::string synth_dir;
  synthetic::SyntheticConfig synth;
  auto* synth_cmd = ingest->add_subcommand("synth", "Write the synthetic train/dev/test corpora");
  synth_cmd->add_option("--out-dir", synth_dir, "output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->required();
  synth_cmd->add_option("--train-reports", synth.train_reports);
  synth_cmd->add_option("--dev-reports", synth.dev_reports);
  synth_cmd->add_option("--test-reports", synth.test_reports);
  synth_cmd->callback([&] {
    action = [&] {
      const auto data = synthetic::generate(synth);
      std::filesystem::create_directories(synth_dir);
      for (const auto* c : {&data.train, &data.dev, &data.test}) {
        const auto path = (std::filesystem::path(synth_dir) / (std::string(to_string(c->split)) + ".json")).string();
        save_corpus(*c, path);
        std::printf("%s: %zu records\n", path.c_str(), c->size());
      }
    };
  });

  // forge
  auto* forge_cmd = app.add_subcommand("forge", "Forge preference pairs");
  forge_cmd->require_subcommand(1);
  std::string corpus_path, dev_path, test_path, out_path, predictions_out;

  auto* forge_rules = forge_cmd->add_subcommand("rules", "Rule-based negatives");
  add_config(forge_rules, common);
  add_seed(forge_rules, common);
  forge_rules->add_option("--corpus", corpus_path, "training corpus")->required()->check(CLI::ExistingFile);
  forge_rules->add_option("--out", out_path, "pairs JSONL (default stdout)");
  std::optional<int> negatives_per_tuple, global_cap;
  forge_rules->add_option("--negatives-per-tuple", negatives_per_tuple);
  forge_rules->add_option("--global-cap", global_cap);
  forge_rules->callback([&] {
    action = [&] {
      auto cfg = common.load();
      if (negatives_per_tuple) cfg.rules.negatives_per_tuple = *negatives_per_tuple;
      if (global_cap) cfg.rules.global_cap = *global_cap;
      cfg.rules.seed = common.seed;
      const auto pairs = rules::forge_rules(load_corpus(corpus_path), cfg.rules);
      write_or_print(out_path, pairs_to_jsonl(pairs));
      spdlog::info("{} rule-based pairs", pairs.size());
    };
  });

  auto* forge_model = forge_cmd->add_subcommand("model", "Split-half model negatives");
  add_config(forge_model, common);
  add_seed(forge_model, common);
  forge_model->add_option("--corpus", corpus_path, "training corpus")->required()->check(CLI::ExistingFile);
  forge_model->add_option("--dev", dev_path, "dev corpus for early stopping")->required()->check(CLI::ExistingFile);
  forge_model->add_option("--out", out_path, "pairs JSONL (default stdout)");
  forge_model->add_option("--predictions", predictions_out, "also write the prediction records");
  forge_model->callback([&] {
    action = [&] {
      const auto cfg = common.load();
      const Corpus train = load_corpus(corpus_path);
      const auto split =
          forge::split_half_predict(train, {cfg.sft, load_corpus(dev_path, Split::dev)}, common.seed);
      if (!predictions_out.empty()) write_text(predictions_out, predictions_jsonl(split.predictions));
      const auto pairs = forge::collect_incorrect(split.predictions, train);
      write_or_print(out_path, pairs_to_jsonl(pairs));
      spdlog::info("{} model-based pairs", pairs.size());
    };
  });

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "Keep pairs whose rejected-vs-gold F1 is below a threshold");
  std::string pairs_path;
  double threshold = 0.9;
  filter_cmd->add_option("--pairs", pairs_path, "pairs JSONL")->required()->check(CLI::ExistingFile);
  filter_cmd->add_option("--threshold", threshold, "F1 threshold in (0, 1]");
  filter_cmd->add_option("--out", out_path, "output JSONL (default stdout)");
  filter_cmd->callback([&] {
    action = [&] { write_or_print(out_path, pairs_to_jsonl(forge::filter_by_f1(load_pairs(pairs_path), {threshold}))); };
  });

  // sft train
  auto* sft_cmd = app.add_subcommand("sft", "Supervised fine-tuning");
  sft_cmd->require_subcommand(1);
  auto* sft_train_cmd = sft_cmd->add_subcommand("train", "Train the answer policy on gold answers");
  add_config(sft_train_cmd, common);
  add_seed(sft_train_cmd, common);
  std::optional<double> lr;
  std::optional<int> epochs;
  std::string log_out;
  sft_train_cmd->add_option("--train", corpus_path, "training corpus")->required()->check(CLI::ExistingFile);
  sft_train_cmd->add_option("--dev", dev_path, "dev corpus")->required()->check(CLI::ExistingFile);
  sft_train_cmd->add_option("--out", out_path, "policy file")->required();
  sft_train_cmd->add_option("--lr", lr, "learning rate");
  sft_train_cmd->add_option("--max-epochs", epochs);
  sft_train_cmd->add_option("--log", log_out, "per-epoch log JSONL");
  sft_train_cmd->callback([&] {
    action = [&] {
      auto cfg = common.load();
      if (lr) cfg.sft.learning_rate = *lr;
      if (epochs) cfg.sft.max_epochs = *epochs;
      const auto result =
          sft_train(load_corpus(corpus_path), load_corpus(dev_path, Split::dev), cfg.sft, common.seed);
      policy::save_params(result.params, out_path, {{"stage", "sft"}, {"best_epoch", result.best_epoch}});
      if (!log_out.empty()) write_text(log_out, epoch_log_jsonl(result.log));
      std::printf("best epoch %d, dev F1 %.2f\n", result.best_epoch, result.best_dev_f1);
    };
  });

  // dpo train
  auto* dpo_cmd = app.add_subcommand("dpo", "Preference optimization");
  dpo_cmd->require_subcommand(1);
  auto* dpo_train_cmd = dpo_cmd->add_subcommand("train", "Train from an SFT policy on preference pairs");
  add_config(dpo_train_cmd, common);
  add_seed(dpo_train_cmd, common);
  std::string sft_path, loss_name;
  std::optional<double> beta;
  dpo_train_cmd->add_option("--sft", sft_path, "SFT policy file")->required()->check(CLI::ExistingFile);
  dpo_train_cmd->add_option("--pairs", pairs_path, "pairs JSONL")->required()->check(CLI::ExistingFile);
  dpo_train_cmd->add_option("--dev", dev_path, "dev corpus")->required()->check(CLI::ExistingFile);
  dpo_train_cmd->add_option("--out", out_path, "policy file")->required();
  dpo_train_cmd->add_option("--loss", loss_name, "dpo, ipo or rso");
  dpo_train_cmd->add_option("--beta", beta);
  dpo_train_cmd->add_option("--lr", lr, "learning rate");
  dpo_train_cmd->add_option("--max-epochs", epochs);
  dpo_train_cmd->add_option("--log", log_out, "per-epoch log JSONL");
  dpo_train_cmd->callback([&] {
    action = [&] {
      auto cfg = common.load();
      if (!loss_name.empty()) cfg.loss.kind = pref::parse_loss_kind(loss_name);
      if (beta) cfg.loss.beta = *beta;
      if (lr) cfg.loss.learning_rate = *lr;
      if (epochs) cfg.loss.max_epochs = *epochs;
      const auto sft = policy::load_params(sft_path);
      const auto result =
          pref::dpo_train(sft, load_pairs(pairs_path), load_corpus(dev_path, Split::dev), cfg.loss, common.seed);
      policy::save_params(result.params, out_path,
                  {{"stage", std::string(pref::to_string(cfg.loss.kind))}, {"best_epoch", result.best_epoch}});
      if (!log_out.empty()) write_text(log_out, epoch_log_jsonl(result.log));
      std::printf("best epoch %d, dev F1 %.2f\n", result.best_epoch, result.best_dev_f1);
    };
  });

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Answer every question of a corpus");
  std::string params_path;
  predict_cmd->add_option("--params", params_path, "policy file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--corpus", corpus_path, "corpus")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--out", out_path, "predictions JSONL (default stdout)");
  predict_cmd->callback([&] {
    action = [&] {
      const auto params = policy::load_params(params_path);
      write_or_print(out_path, answers_jsonl(policy::predict_corpus(params, load_corpus(corpus_path))));
    };
  });

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "SQuAD EM/F1 of predictions against a corpus");
  std::string predictions_path;
  eval_cmd->add_option("--corpus", corpus_path, "gold corpus")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--predictions", predictions_path, "JSONL or {id: answer} JSON")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", out_path, "report JSON (default stdout)");
  eval_cmd->callback([&] {
    action = [&] {
      const auto report = metrics::evaluate(load_predictions(predictions_path), load_corpus(corpus_path));
      write_or_print(out_path, metrics::report_to_json(report).dump(2) + "\n");
    };
  });

  // report sweep
  auto* report_cmd = app.add_subcommand("report", "Reports");
  report_cmd->require_subcommand(1);
  auto* sweep_cmd = report_cmd->add_subcommand("sweep", "Test F1 per (threshold, pair count) cell");
  add_config(sweep_cmd, common);
  add_seed(sweep_cmd, common);
  std::vector<double> thresholds, fractions;
  std::string out_dir;
  sweep_cmd->add_option("--sft", sft_path, "SFT policy file")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--pairs", pairs_path, "unfiltered pairs JSONL")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--dev", dev_path, "dev corpus")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--test", test_path, "test corpus")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--thresholds", thresholds, "F1 thresholds")->delimiter(',');
  sweep_cmd->add_option("--fractions", fractions, "sizes as fractions of the smallest set")->delimiter(',');
  sweep_cmd->add_option("--out-dir", out_dir, "directory for sweep.csv and sweep.json")->required();
  sweep_cmd->callback([&] {
    action = [&] {
      auto cfg = common.load();
      if (!thresholds.empty()) cfg.sweep.thresholds = parse_list(thresholds, "threshold");
      if (!fractions.empty()) cfg.sweep.fractions = parse_list(fractions, "fraction");
      if (cfg.sweep.thresholds.size() < 2 && cfg.sweep.fractions.size() < 2)
        throw ValidationError("a sweep needs at least two thresholds or two sizes");
      const auto pairs = load_pairs(pairs_path);
      std::map<double, std::vector<PreferencePair>> by_threshold;
      for (double t : cfg.sweep.thresholds) by_threshold[t] = forge::filter_by_f1(pairs, {t});
      const auto report = run_threshold_sweep(policy::load_params(sft_path), by_threshold, cfg.sweep.fractions,
                                              load_corpus(dev_path, Split::dev), load_corpus(test_path, Split::test),
                                              cfg.loss, common.seed);
      std::filesystem::create_directories(out_dir);
      write_text((std::filesystem::path(out_dir) / "sweep.csv").string(), sweep_csv(report));
      write_text((std::filesystem::path(out_dir) / "sweep.json").string(), sweep_json(report).dump(2) + "\n");
      std::cout << sweep_csv(report);
    };
  });

  // pipeline run
  auto* pipeline_cmd = app.add_subcommand("pipeline", "End-to-end run");
  pipeline_cmd->require_subcommand(1);
  auto* run_cmd = pipeline_cmd->add_subcommand("run", "ingest, forge, filter, sft, dpo, evaluate, report");
  add_config(run_cmd, common);
  add_seed(run_cmd, common);
  std::string workdir;
  bool no_sweep = false;
  run_cmd->add_option("--train", corpus_path, "training corpus");
  run_cmd->add_option("--dev", dev_path, "dev corpus");
  run_cmd->add_option("--test", test_path, "test corpus");
  run_cmd->add_option("--workdir", workdir, "output directory");
  run_cmd->add_option("--threshold", threshold, "F1 threshold for the training pairs");
  run_cmd->add_flag("--no-sweep", no_sweep, "skip the threshold/size sweep");
  run_cmd->callback([&] {
    action = [&] {
      auto cfg = common.load();
      cfg.seed = common.seed;
      if (!corpus_path.empty()) cfg.train_path = corpus_path;
      if (!dev_path.empty()) cfg.dev_path = dev_path;
      if (!test_path.empty()) cfg.test_path = test_path;
      if (!workdir.empty()) cfg.workdir = workdir;
      if (run_cmd->count("--threshold")) cfg.filter.f1_threshold = threshold;
      if (no_sweep) cfg.sweep.enabled = false;
      const auto result = run_pipeline_detailed(cfg);
      std::cout << comparison_markdown(result.comparison);
      std::printf("manifest: %s\n", (std::filesystem::path(cfg.workdir) / "manifest.json").string().c_str());
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("mrcdpo"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (action) action();
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed input: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  }
}
