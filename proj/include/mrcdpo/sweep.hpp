#pragma once

// Threshold/size sweeps over thresholded preference datasets, and the two
// tables the pipeline reports: pair counts per threshold, and test scores
// per (threshold, training-pair count) cell.

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/model_forge.hpp"
#include "mrcdpo/pairs.hpp"
#include "mrcdpo/pref_opt.hpp"
#include "mrcdpo/rng.hpp"

namespace mrcdpo {

using json = nlohmann::json;

// -- Pair counts per threshold ----------------------------------------------

struct CountRow {
  double threshold = 0.0;
  std::size_t rule_pairs = 0;
  std::size_t model_pairs = 0;
};

/// Rows in the order the thresholds are given.
inline std::vector<CountRow> count_table(const std::vector<PreferencePair>& rule_pairs,
                                         const std::vector<PreferencePair>& model_pairs,
                                         const std::vector<double>& thresholds) {
  std::vector<CountRow> rows;
  for (double t : thresholds)
    rows.push_back({t, forge::filter_by_f1(rule_pairs, {t}).size(), forge::filter_by_f1(model_pairs, {t}).size()});
  return rows;
}

inline std::string format_threshold(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline std::string count_table_csv(const std::vector<CountRow>& rows) {
  std::string out = "threshold,rule_based,model_based\n";
  for (const auto& r : rows)
    out += format_threshold(r.threshold) + "," + std::to_string(r.rule_pairs) + "," + std::to_string(r.model_pairs) + "\n";
  return out;
}

inline json count_table_json(const std::vector<CountRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"threshold", r.threshold}, {"rule_based", r.rule_pairs}, {"model_based", r.model_pairs}});
  return out;
}

// -- Sweep --------------------------------------------------------------------

struct SweepCell {
  double threshold = 0.0;
  std::size_t pairs = 0;
  double test_em = 0.0;
  double test_f1 = 0.0;
  int best_epoch = 0;

  bool operator==(const SweepCell&) const = default;
};

struct SweepReport {
  std::vector<SweepCell> rows;  // sorted by threshold descending, then size

  const SweepCell* find(double threshold, std::size_t pairs) const {
    for (const auto& r : rows)
      if (r.threshold == threshold && r.pairs == pairs) return &r;
    return nullptr;
  }
  std::size_t largest_size() const {
    std::size_t n = 0;
    for (const auto& r : rows) n = std::max(n, r.pairs);
    return n;
  }
};

/// Common training sizes: `fractions` of the smallest dataset, deduplicated
/// and ascending. Empty when that dataset is empty.
inline std::vector<std::size_t> sweep_sizes(const std::map<double, std::vector<PreferencePair>>& pairs_by_threshold,
                                            const std::vector<double>& fractions) {
  if (pairs_by_threshold.empty()) return {};
  std::size_t smallest = SIZE_MAX;
  for (const auto& [t, pairs] : pairs_by_threshold) smallest = std::min(smallest, pairs.size());
  std::vector<std::size_t> sizes;
  for (double f : fractions) {
    const auto n = static_cast<std::size_t>(f * static_cast<double>(smallest) + 0.5);
    if (n > 0) sizes.push_back(std::min(n, smallest));
  }
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  return sizes;
}

/// Seeded subsample of `n` pairs. Smaller samples are prefixes of larger
/// ones, so growing the budget only adds pairs.
inline std::vector<PreferencePair> subsample(const std::vector<PreferencePair>& pairs, std::size_t n, uint64_t seed) {
  if (n > pairs.size()) throw ValidationError("subsample larger than the dataset");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span(order));
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<PreferencePair> out;
  out.reserve(n);
  for (std::size_t i : order) out.push_back(pairs[i]);
  return out;
}

/// Tabulates `results` on the (threshold, size) grid. Cells missing from
/// `results` are skipped; cells whose threshold or size is not on the grid
/// are rejected.
inline SweepReport report_threshold_sweep(const std::map<double, std::vector<PreferencePair>>& pairs_by_threshold,
                                          const std::vector<std::size_t>& sizes,
                                          const std::vector<SweepCell>& results) {
  SweepReport report;
  for (const auto& cell : results) {
    auto it = pairs_by_threshold.find(cell.threshold);
    if (it == pairs_by_threshold.end())
      throw ValidationError("sweep result for unknown threshold " + format_threshold(cell.threshold));
    if (std::find(sizes.begin(), sizes.end(), cell.pairs) == sizes.end())
      throw ValidationError("sweep result for unknown size " + std::to_string(cell.pairs));
    if (cell.pairs > it->second.size())
      throw ValidationError("sweep size " + std::to_string(cell.pairs) + " exceeds the dataset at threshold " +
                            format_threshold(cell.threshold));
    report.rows.push_back(cell);
  }
  std::sort(report.rows.begin(), report.rows.end(), [](const SweepCell& a, const SweepCell& b) {
    if (a.threshold != b.threshold) return a.threshold > b.threshold;
    return a.pairs < b.pairs;
  });
  return report;
}

inline std::string sweep_csv(const SweepReport& report) {
  std::ostringstream out;
  out << "threshold,pairs,test_em,test_f1,best_epoch\n";
  char buf[128];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%.2f,%zu,%.17g,%.17g,%d\n", r.threshold, r.pairs, r.test_em, r.test_f1,
                  r.best_epoch);
    out << buf;
  }
  return out.str();
}

inline SweepReport parse_sweep_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "threshold,pairs,test_em,test_f1,best_epoch")
    throw ValidationError("sweep CSV has an unexpected header");
  SweepReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    SweepCell c;
    if (std::sscanf(line.c_str(), "%lf,%zu,%lf,%lf,%d", &c.threshold, &c.pairs, &c.test_em, &c.test_f1,
                    &c.best_epoch) != 5)
      throw ValidationError("malformed sweep CSV row: " + line);
    report.rows.push_back(c);
  }
  return report;
}

inline json sweep_json(const SweepReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"threshold", r.threshold},
                    {"pairs", r.pairs},
                    {"test_em", r.test_em},
                    {"test_f1", r.test_f1},
                    {"best_epoch", r.best_epoch}});
  return {{"rows", rows}};
}

inline SweepReport sweep_from_json(const json& j) {
  SweepReport report;
  for (const auto& r : j.at("rows"))
    report.rows.push_back({r.at("threshold").get<double>(), r.at("pairs").get<std::size_t>(),
                           r.at("test_em").get<double>(), r.at("test_f1").get<double>(),
                           r.at("best_epoch").get<int>()});
  return report;
}

/// Trains one preference run per (threshold, size) cell from the same SFT
/// policy and scores each on `test`.
inline SweepReport run_threshold_sweep(const policy::PolicyParams& sft,
                                       const std::map<double, std::vector<PreferencePair>>& pairs_by_threshold,
                                       const std::vector<double>& fractions, const Corpus& dev, const Corpus& test,
                                       const pref::LossConfig& loss, uint64_t seed) {
  const auto sizes = sweep_sizes(pairs_by_threshold, fractions);
  const auto test_examples = policy::make_examples(test, sft.options);
  std::vector<SweepCell> cells;
  for (const auto& [t, pairs] : pairs_by_threshold) {
    const uint64_t cell_seed = derive_seed(seed, "sweep-" + format_threshold(t));
    for (std::size_t n : sizes) {
      const auto sample = subsample(pairs, n, cell_seed);
      const auto run = pref::dpo_train(sft, sample, dev, loss, derive_seed(cell_seed, std::to_string(n)));
      const auto report = evaluate_policy(run.params, test_examples, test);
      cells.push_back({t, n, report.em, report.f1, run.best_epoch});
    }
  }
  return report_threshold_sweep(pairs_by_threshold, sizes, cells);
}

}  // namespace mrcdpo
