#pragma once

// Deterministic generator of radiology-style reading-comprehension corpora.
//
// Each report is a FINDINGS section of templated sentences (lesions,
// positive and negated findings, normal organs) with an INDICATION line
// that may mention terms the findings never describe. Questions ask about
// lesions, findings and organs; some ask about things the report does not
// describe and are unanswerable. Two knobs keep the task only partly
// learnable: answer boundaries vary between annotators, and unanswerable
// questions often reuse terms that do appear in the report.

#include <algorithm>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/rng.hpp"
#include "mrcdpo/text.hpp"

namespace mrcdpo::synthetic {

struct SyntheticConfig {
  int train_reports = 110;
  int dev_reports = 40;
  int test_reports = 60;
  int questions_per_report = 5;
  double unanswerable_rate = 0.2;
  // Chance an unanswerable question's term is planted in the indication.
  double planted_term_rate = 0.6;
  // Chance an annotator extends a lesion answer with its location.
  double location_in_answer_rate = 0.35;
  // Chance an annotator drops the modifier of a finding answer.
  double modifier_drop_rate = 0.3;
  // Share of facts stated with a hedge ("possible mild edema"), and the
  // chance an annotator treats a hedged finding as an answer at all.
  double hedged_fact_rate = 0.3;
  double hedged_answerable_rate = 0.65;
  uint64_t seed = 2024;
};

struct SyntheticCorpus {
  Corpus train;
  Corpus dev;
  Corpus test;
};

namespace detail {

inline const std::vector<std::string> kLesions = {"nodule", "mass", "cyst", "lesion", "opacity", "calcification",
                                                  "granuloma", "hemangioma"};
inline const std::vector<std::string> kLocations = {
    "left upper lobe",  "right upper lobe",   "right middle lobe", "left lower lobe",  "right lower lobe",
    "lingula",          "right hepatic lobe", "left hepatic lobe", "pancreatic head",  "pancreatic tail",
    "left kidney",      "right kidney",       "spleen",            "thyroid isthmus",  "left adrenal gland"};
inline const std::vector<std::string> kSizes = {"3 mm", "5 mm", "8 mm", "1.2 cm", "1.5 cm", "2 cm", "2.4 cm", "3.1 cm", "4 cm"};
inline const std::vector<std::string> kFindings = {"pleural effusion", "pneumothorax",   "free fluid",  "hydronephrosis",
                                                   "consolidation",    "cardiomegaly",   "atelectasis", "ascites",
                                                   "lymphadenopathy",  "pericardial effusion", "emphysema", "edema"};
inline const std::vector<std::string> kModifiers = {"small", "moderate", "large", "trace", "mild", "minimal"};
inline const std::vector<std::string> kSides = {"left", "right", "bilateral"};
inline const std::vector<std::string> kOrgans = {"liver", "spleen", "pancreas", "gallbladder", "kidneys", "heart",
                                                 "aorta", "bladder", "adrenal glands", "bowel", "lungs", "thyroid"};
inline const std::vector<std::string> kHedges = {"possible", "questionable", "probable", "likely", "suspected",
                                                 "equivocal"};
inline const std::vector<std::string> kNormalPhrases = {"normal in appearance", "unremarkable", "within normal limits",
                                                        "normal in size"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

inline bool plural(const std::string& organ) { return organ.back() == 's'; }

struct Fact {
  std::string sentence;
  std::vector<std::pair<std::string, std::vector<std::string>>> questions;  // question, answer variants
  std::string term;                                                         // what the fact is about
};

struct ReportBuilder {
  const SyntheticConfig& config;
  Rng& rng;

  Fact lesion() {
    const auto& kind = pick(kLesions, rng);
    const auto& size = pick(kSizes, rng);
    const auto& loc = pick(kLocations, rng);
    Fact f;
    f.term = kind;
    f.sentence = "there is a " + size + " " + kind + " in the " + loc + " .";
    std::string is_there = size + " " + kind;
    if (rng.bernoulli(config.location_in_answer_rate)) is_there += " in the " + loc;
    f.questions.push_back({"Is there a " + kind + "?", {is_there}});
    f.questions.push_back({"Where is the " + kind + " located?", {loc}});
    f.questions.push_back({"What is the size of the " + kind + "?", {size}});
    return f;
  }

  Fact positive_finding() {
    const auto& finding = pick(kFindings, rng);
    const auto& mod = pick(kModifiers, rng);
    const bool sided = finding.find("effusion") != std::string::npos || finding == "pneumothorax" ||
                       finding == "atelectasis" || finding == "consolidation";
    const std::string side = sided ? pick(kSides, rng) + " " : "";
    Fact f;
    f.term = finding;
    f.sentence = mod + " " + side + finding + " is noted .";
    std::string answer = rng.bernoulli(config.modifier_drop_rate) ? side + finding : mod + " " + side + finding;
    f.questions.push_back({"Is there " + finding + "?", {answer}});
    f.questions.push_back({"How severe is the " + finding + "?", {mod}});
    return f;
  }

  Fact negative_finding() {
    const auto& finding = pick(kFindings, rng);
    Fact f;
    f.term = finding;
    const bool evidence = rng.bernoulli(0.5);
    f.sentence = evidence ? "there is no evidence of " + finding + " ." : "no " + finding + " .";
    f.questions.push_back({"Is there " + finding + "?", {evidence ? "no evidence of " + finding : "no " + finding}});
    return f;
  }

  // Annotators disagree on hedged findings: some leave the question
  // unanswered, the rest pick one of three boundaries.
  Fact hedged_finding() {
    const auto& finding = pick(kFindings, rng);
    const auto& mod = pick(kModifiers, rng);
    const auto& hedge = pick(kHedges, rng);
    Fact f;
    f.term = finding;
    f.sentence = hedge + " " + mod + " " + finding + " .";
    std::string answer;
    if (rng.bernoulli(config.hedged_answerable_rate)) {
      switch (rng.below(3)) {
        case 0: answer = hedge + " " + mod + " " + finding; break;
        case 1: answer = mod + " " + finding; break;
        default: answer = finding; break;
      }
    }
    f.questions.push_back({"Is there " + finding + "?", {answer}});
    return f;
  }

  Fact normal_organ() {
    const auto& organ = pick(kOrgans, rng);
    const auto& phrase = pick(kNormalPhrases, rng);
    Fact f;
    f.term = organ;
    f.sentence = "the " + organ + (plural(organ) ? " are " : " is ") + phrase + " .";
    f.questions.push_back({"How does the " + organ + " appear?", {phrase}});
    return f;
  }
};

}  // namespace detail

inline std::vector<QaRecord> generate_report(const SyntheticConfig& config, Rng& rng, const std::string& id_prefix) {
  using namespace detail;
  ReportBuilder builder{config, rng};

  std::vector<Fact> facts;
  std::vector<std::string> used_terms;
  const int n_facts = static_cast<int>(rng.between(4, 7));
  for (int i = 0; i < n_facts && facts.size() < 12; ++i) {
    Fact f;
    if (rng.bernoulli(config.hedged_fact_rate)) {
      f = builder.hedged_finding();
    } else switch (rng.below(4)) {
      case 0: f = builder.lesion(); break;
      case 1: f = builder.positive_finding(); break;
      case 2: f = builder.negative_finding(); break;
      default: f = builder.normal_organ(); break;
    }
    if (std::find(used_terms.begin(), used_terms.end(), f.term) != used_terms.end()) continue;
    used_terms.push_back(f.term);
    facts.push_back(std::move(f));
  }

  // Unanswerable questions ask about terms no fact describes.
  struct Unanswerable {
    std::string question;
    std::string term;
  };
  std::vector<Unanswerable> unanswerable;
  const int n_questions = config.questions_per_report;
  for (int q = 0; q < n_questions; ++q) {
    if (!rng.bernoulli(config.unanswerable_rate)) continue;
    for (int attempt = 0; attempt < 20; ++attempt) {
      std::string term, question;
      switch (rng.below(3)) {
        case 0: term = pick(kLesions, rng); question = "Is there a " + term + "?"; break;
        case 1: term = pick(kFindings, rng); question = "Is there " + term + "?"; break;
        default: term = pick(kOrgans, rng); question = "How does the " + term + " appear?"; break;
      }
      if (std::find(used_terms.begin(), used_terms.end(), term) != used_terms.end()) continue;
      used_terms.push_back(term);
      unanswerable.push_back({question, term});
      break;
    }
  }

  std::vector<std::string> indication_terms;
  for (const auto& u : unanswerable)
    if (rng.bernoulli(config.planted_term_rate)) indication_terms.push_back(u.term);
  if (!facts.empty() && rng.bernoulli(0.5)) indication_terms.push_back(pick(facts, rng).term);
  if (indication_terms.empty()) indication_terms.push_back("interval change");

  std::string context = "INDICATION : evaluate for ";
  for (std::size_t i = 0; i < indication_terms.size(); ++i) {
    if (i) context += i + 1 == indication_terms.size() ? " and " : " , ";
    context += indication_terms[i];
  }
  context += " . FINDINGS :";
  std::vector<std::size_t> sentence_start;
  for (const auto& f : facts) {
    context += " ";
    sentence_start.push_back(context.size());
    context += f.sentence;
  }

  // Answerable questions: at most one per fact, chosen at random.
  struct Answerable {
    std::string question;
    std::string answer;
    std::size_t fact;
  };
  std::vector<Answerable> answerable;
  std::vector<std::size_t> fact_order(facts.size());
  for (std::size_t i = 0; i < fact_order.size(); ++i) fact_order[i] = i;
  rng.shuffle(std::span(fact_order));
  const auto wanted = static_cast<std::size_t>(std::max<int>(1, n_questions - static_cast<int>(unanswerable.size())));
  for (std::size_t i = 0; i < fact_order.size() && answerable.size() < wanted; ++i) {
    const auto& f = facts[fact_order[i]];
    const auto& [question, variants] = f.questions[rng.below(f.questions.size())];
    answerable.push_back({question, variants.front(), fact_order[i]});
  }

  std::vector<QaRecord> records;
  auto add = [&](const std::string& question, const std::string& answer, std::size_t fact) {
    QaRecord r;
    r.id = id_prefix + "-q" + std::to_string(records.size());
    r.context = context;
    r.question = question;
    if (!answer.empty()) {
      const auto within = facts[fact].sentence.find(answer);
      if (within == std::string::npos) return;
      const auto pos = sentence_start[fact] + within;
      r.gold_answers.push_back({answer, text::code_point_offset_of(context, pos), pos});
    }
    r.is_answerable = !r.gold_answers.empty();
    records.push_back(std::move(r));
  };
  for (const auto& a : answerable) add(a.question, a.answer, a.fact);
  for (const auto& u : unanswerable) add(u.question, "", 0);
  // Questions of one report are asked in random order.
  rng.shuffle(std::span(records));
  for (std::size_t i = 0; i < records.size(); ++i) records[i].id = id_prefix + "-q" + std::to_string(i);
  return records;
}

inline Corpus generate_split(const SyntheticConfig& config, Split split, int reports) {
  Corpus corpus;
  corpus.split = split;
  Rng rng(derive_seed(config.seed, "synthetic-" + std::string(to_string(split))));
  for (int i = 0; i < reports; ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "%s-r%04d", std::string(to_string(split)).c_str(), i);
    for (auto& r : generate_report(config, rng, prefix)) corpus.records.push_back(std::move(r));
  }
  validate_corpus(corpus);
  return corpus;
}

inline SyntheticCorpus generate(const SyntheticConfig& config) {
  return {generate_split(config, Split::train, config.train_reports),
          generate_split(config, Split::dev, config.dev_reports),
          generate_split(config, Split::test, config.test_reports)};
}

}  // namespace mrcdpo::synthetic
