#pragma once

// Small fixtures shared by the test suites.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/text.hpp"

namespace testing {

using mrcdpo::Corpus;
using mrcdpo::GoldAnswer;
using mrcdpo::QaRecord;

inline GoldAnswer gold_at(const std::string& context, const std::string& answer, std::size_t from = 0) {
  const auto pos = context.find(answer, from);
  if (pos == std::string::npos) throw std::runtime_error("fixture answer not in context: " + answer);
  return {answer, mrcdpo::text::code_point_offset_of(context, pos), pos};
}

inline QaRecord answerable(std::string id, std::string context, std::string question, const std::string& answer) {
  QaRecord r;
  r.id = std::move(id);
  r.context = std::move(context);
  r.question = std::move(question);
  r.gold_answers.push_back(gold_at(r.context, answer));
  r.is_answerable = true;
  return r;
}

inline QaRecord unanswerable(std::string id, std::string context, std::string question) {
  QaRecord r;
  r.id = std::move(id);
  r.context = std::move(context);
  r.question = std::move(question);
  r.is_answerable = false;
  return r;
}

inline Corpus corpus_of(std::vector<QaRecord> records, mrcdpo::Split split = mrcdpo::Split::train) {
  Corpus c;
  c.records = std::move(records);
  c.split = split;
  return c;
}

/// Corpus whose answers follow from the question: "What is the X?" is
/// answered by the token after "X". Values are distinct within a context,
/// so a policy can learn it exactly.
inline Corpus pattern_corpus(int questions, uint64_t seed, const std::string& prefix,
                             mrcdpo::Split split = mrcdpo::Split::train) {
  static const std::vector<std::string> keys = {"finding", "organ", "size", "side", "grade", "status"};
  static const std::vector<std::string> values = {"nodule", "liver",  "small", "left",   "mild",  "stable",
                                                  "cyst",   "kidney", "large", "right",  "severe", "new",
                                                  "mass",   "spleen", "tiny",  "medial", "mod",   "old"};
  std::mt19937_64 rng(seed);
  Corpus c;
  c.split = split;
  for (int q = 0; q < questions; ++q) {
    std::vector<std::string> order = keys;
    std::shuffle(order.begin(), order.end(), rng);
    std::string context;
    std::string target_value;
    const std::string& target = order[rng() % order.size()];
    std::vector<std::string> pool = values;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::string& k = order[i];
      if (!context.empty()) context += " ; ";
      context += k + " " + pool[i];
      if (k == target) target_value = k + " " + pool[i];
    }
    QaRecord r;
    r.id = prefix + std::to_string(q);
    r.context = context;
    r.question = "What is the " + target + "?";
    const auto pos = context.find(target_value) + target.size() + 1;
    const auto value = target_value.substr(target.size() + 1);
    r.gold_answers.push_back({value, mrcdpo::text::code_point_offset_of(context, pos), pos});
    r.is_answerable = true;
    c.records.push_back(std::move(r));
  }
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mrcdpo-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
