#pragma once

// Exact answer policy pi(y | x): a log-linear softmax over the candidate
// answers of a prompt (every context token span up to max_span_tokens,
// plus the no-answer candidate ""). Scores are w . phi(x, y) with hashed
// sparse features.
//
// Every feature of a span depends on its start token, its end token, its
// length, or is a sum over its tokens. Example caches those four families
// per position so a span scores in O(1) and expected feature vectors
// reduce to per-position marginals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "mrcdpo/corpus.hpp"
#include "mrcdpo/digest.hpp"
#include "mrcdpo/errors.hpp"
#include "mrcdpo/metrics.hpp"
#include "mrcdpo/rng.hpp"
#include "mrcdpo/text.hpp"

namespace mrcdpo::policy {

inline constexpr std::size_t kDefaultDim = std::size_t{1} << 18;
inline constexpr int kSchemaVersion = 1;

// Fixed low feature indices; hashed features live above kDenseFeatures.
enum DenseFeature : uint32_t {
  kNoAnswer = 0,
  kQuestionOverlap = 1,
  kWindowOverlap = 2,
  kSpanLength = 3,
  kLogSpanLength = 4,
  kStartPosition = 5,
  kQuestionCoverage = 6,  // no-answer only: share of question terms found in context
  kDenseFeatures = 8,
};

inline constexpr int kWindow = 3;

struct PolicyOptions {
  int max_span_tokens = 20;
  int max_prompt_tokens = 768;
  int max_target_tokens = 128;
  std::size_t dim = kDefaultDim;

  bool operator==(const PolicyOptions&) const = default;
};

struct Feature {
  uint32_t index;
  double value;
  bool operator==(const Feature&) const = default;
};

/// Sparse feature vector sorted by index with duplicate indices summed.
using FeatureVector = std::vector<Feature>;

struct PolicyParams {
  std::vector<double> weights;
  uint64_t seed = 0;
  int schema_version = kSchemaVersion;
  PolicyOptions options;

  static PolicyParams zeros(const PolicyOptions& options, uint64_t seed = 0) {
    PolicyParams p;
    p.options = options;
    p.seed = seed;
    p.weights.assign(options.dim, 0.0);
    return p;
  }

  bool all_finite() const {
    return std::all_of(weights.begin(), weights.end(), [](double w) { return std::isfinite(w); });
  }

  bool operator==(const PolicyParams&) const = default;
};

inline uint32_t hashed_index(std::string_view family, std::string_view a, std::string_view b,
                             std::size_t dim) {
  uint64_t h = fnv1a64(family);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(a, h);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(b, h);
  return static_cast<uint32_t>(kDenseFeatures + splitmix64(h) % (dim - kDenseFeatures));
}

inline double dot(const std::vector<Feature>& fs, const std::vector<double>& w) {
  double s = 0.0;
  for (const auto& f : fs) s += f.value * w[f.index];
  return s;
}

inline void axpy(double a, const std::vector<Feature>& fs, std::vector<double>& out) {
  if (a == 0.0) return;
  for (const auto& f : fs) out[f.index] += a * f.value;
}

/// Candidate answer: a token span [first, last] of the context, or the
/// no-answer candidate. Injected candidates carry their own text and reuse
/// the features of the token span covering their location.
struct Candidate {
  uint32_t first = 0;
  uint32_t last = 0;
  bool no_answer = false;
  int32_t injected = -1;  // index into Example::injected_texts

  uint32_t length() const { return no_answer ? 0 : last - first + 1; }
};

/// A featurized prompt: context tokens, question terms, per-position
/// feature families, and the candidate set.
class Example {
 public:
  Example(std::string_view context, std::string_view question, const PolicyOptions& options)
      : options_(options), question_(question) {
    build_tokens(context);
    build_features();
    build_candidates();
  }

  std::string_view context() const { return context_; }
  std::string_view question() const { return question_; }
  const PolicyOptions& options() const { return options_; }
  const std::vector<text::Token>& tokens() const { return tokens_; }
  const std::vector<Candidate>& candidates() const { return candidates_; }
  std::size_t size() const { return candidates_.size(); }
  bool truncated() const { return truncated_; }

  std::string_view text_of(const Candidate& c) const {
    if (c.no_answer) return {};
    if (c.injected >= 0) return injected_texts_[static_cast<std::size_t>(c.injected)];
    return std::string_view(context_).substr(tokens_[c.first].begin,
                                             tokens_[c.last].end - tokens_[c.first].begin);
  }
  std::string_view text_of(std::size_t i) const { return text_of(candidates_[i]); }

  /// Index of the candidate whose text is `answer`, if any. "" is the
  /// no-answer candidate, always at index 0.
  std::optional<std::size_t> find(std::string_view answer) const {
    if (answer.empty()) return 0;
    for (std::size_t i = 1; i < candidates_.size(); ++i)
      if (text_of(i) == answer) return i;
    return std::nullopt;
  }

  /// Makes `answer` a candidate if it is not one already, located at
  /// `byte_hint` when given, else at its first occurrence in the context.
  /// Returns nullopt when the text cannot be located.
  std::optional<std::size_t> ensure(std::string_view answer,
                                    std::optional<std::size_t> byte_hint = std::nullopt) {
    if (auto i = find(answer)) return i;
    std::size_t begin = byte_hint.value_or(context_.find(answer));
    if (begin == std::string::npos || begin + answer.size() > context_.size() ||
        std::string_view(context_).substr(begin, answer.size()) != answer)
      begin = context_.find(answer);
    if (begin == std::string::npos) return std::nullopt;
    const std::size_t end = begin + answer.size();
    std::optional<uint32_t> first, last;
    for (uint32_t t = 0; t < tokens_.size(); ++t) {
      if (tokens_[t].end > begin && tokens_[t].begin < end) {
        if (!first) first = t;
        last = t;
      }
    }
    if (!first) return std::nullopt;
    injected_texts_.emplace_back(answer);
    Candidate c;
    c.first = *first;
    c.last = *last;
    c.injected = static_cast<int32_t>(injected_texts_.size() - 1);
    candidates_.push_back(c);
    return candidates_.size() - 1;
  }

  /// Candidate scores w . phi for every candidate.
  std::vector<double> scores(const std::vector<double>& w) const {
    const std::size_t n = tokens_.size();
    std::vector<double> start(n), end(n), prefix(n + 1, 0.0), len(length_features_.size());
    for (std::size_t i = 0; i < n; ++i) {
      start[i] = dot(start_features_[i], w);
      end[i] = dot(end_features_[i], w);
      prefix[i + 1] = prefix[i] + dot(token_features_[i], w);
    }
    for (std::size_t l = 1; l < len.size(); ++l) len[l] = dot(length_features_[l], w);
    std::vector<double> out(candidates_.size());
    for (std::size_t k = 0; k < candidates_.size(); ++k) {
      const Candidate& c = candidates_[k];
      out[k] = c.no_answer ? dot(no_answer_features_, w)
                           : start[c.first] + end[c.last] + len[c.length()] + prefix[c.last + 1] - prefix[c.first];
    }
    return out;
  }

  /// out += sum_k coef[k] * phi(candidate k).
  void accumulate(const std::vector<double>& coef, std::vector<double>& out) const {
    const std::size_t n = tokens_.size();
    std::vector<double> start(n, 0.0), end(n, 0.0), cover(n + 1, 0.0), len(length_features_.size(), 0.0);
    double no_answer = 0.0;
    for (std::size_t k = 0; k < candidates_.size(); ++k) {
      const double a = coef[k];
      if (a == 0.0) continue;
      const Candidate& c = candidates_[k];
      if (c.no_answer) {
        no_answer += a;
        continue;
      }
      start[c.first] += a;
      end[c.last] += a;
      len[c.length()] += a;
      cover[c.first] += a;
      cover[c.last + 1] -= a;
    }
    double running = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      running += cover[i];
      axpy(start[i], start_features_[i], out);
      axpy(end[i], end_features_[i], out);
      axpy(running, token_features_[i], out);
    }
    for (std::size_t l = 1; l < len.size(); ++l) axpy(len[l], length_features_[l], out);
    axpy(no_answer, no_answer_features_, out);
  }

  /// Explicit feature vector of one candidate.
  FeatureVector features(std::size_t k) const {
    const Candidate& c = candidates_[k];
    std::map<uint32_t, double> merged;
    auto add = [&](const std::vector<Feature>& fs) {
      for (const auto& f : fs) merged[f.index] += f.value;
    };
    if (c.no_answer) {
      add(no_answer_features_);
    } else {
      add(start_features_[c.first]);
      add(end_features_[c.last]);
      add(length_features_[c.length()]);
      for (uint32_t t = c.first; t <= c.last; ++t) add(token_features_[t]);
    }
    FeatureVector out;
    for (const auto& [i, v] : merged)
      if (v != 0.0) out.push_back({i, v});
    return out;
  }

 private:
  void build_tokens(std::string_view context) {
    const auto question_tokens = text::tokenize(question_).size();
    // "context:", "<SEP>" and "question:" count toward the prompt budget.
    const auto budget = std::max<std::ptrdiff_t>(
        0, options_.max_prompt_tokens - 3 - static_cast<std::ptrdiff_t>(question_tokens));
    tokens_ = text::tokenize(context);
    if (static_cast<std::ptrdiff_t>(tokens_.size()) > budget) {
      truncated_ = true;
      spdlog::warn("prompt exceeds {} tokens; context truncated from {} to {} tokens",
                   options_.max_prompt_tokens, tokens_.size(), budget);
      tokens_.resize(static_cast<std::size_t>(budget));
      context_ = std::string(context.substr(0, tokens_.empty() ? 0 : tokens_.back().end));
    } else {
      context_ = std::string(context);
    }
  }

  void build_features() {
    const std::size_t dim = options_.dim;
    const std::size_t n = tokens_.size();

    std::vector<std::string> raw(n), norm(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto tok = std::string_view(context_).substr(tokens_[i].begin, tokens_[i].size());
      raw[i] = text::lower(tok);
      norm[i] = metrics::normalize(tok);
    }
    std::vector<std::string> terms;
    for (const auto& t : text::split(question_)) {
      auto k = metrics::normalize(t);
      if (!k.empty() && std::find(terms.begin(), terms.end(), k) == terms.end()) terms.push_back(std::move(k));
    }
    std::unordered_set<std::string> term_set(terms.begin(), terms.end());
    std::unordered_set<std::string> context_terms(norm.begin(), norm.end());
    auto in_question = [&](std::size_t i) { return !norm[i].empty() && term_set.count(norm[i]) > 0; };

    start_features_.assign(n, {});
    end_features_.assign(n, {});
    token_features_.assign(n, {});
    static const std::string kBos = "<bos>", kEos = "<eos>";
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& prev = i == 0 ? kBos : raw[i - 1];
      const std::string& next = i + 1 == n ? kEos : raw[i + 1];
      int left_window = 0, right_window = 0;
      for (std::size_t k = 1; k <= kWindow; ++k) {
        if (i >= k && in_question(i - k)) ++left_window;
        if (i + k < n && in_question(i + k)) ++right_window;
      }

      auto& s = start_features_[i];
      s.push_back({kStartPosition, n > 0 ? static_cast<double>(i) / static_cast<double>(n) : 0.0});
      if (left_window) s.push_back({kWindowOverlap, static_cast<double>(left_window)});
      s.push_back({hashed_index("prev", prev, "", dim), 1.0});
      s.push_back({hashed_index("first", raw[i], "", dim), 1.0});
      for (const auto& q : terms) {
        s.push_back({hashed_index("q-prev", q, prev, dim), 1.0});
        s.push_back({hashed_index("q-first", q, raw[i], dim), 1.0});
      }

      auto& e = end_features_[i];
      if (right_window) e.push_back({kWindowOverlap, static_cast<double>(right_window)});
      e.push_back({hashed_index("next", next, "", dim), 1.0});
      e.push_back({hashed_index("last", raw[i], "", dim), 1.0});
      for (const auto& q : terms) {
        e.push_back({hashed_index("q-next", q, next, dim), 1.0});
        e.push_back({hashed_index("q-last", q, raw[i], dim), 1.0});
      }

      auto& t = token_features_[i];
      if (in_question(i)) t.push_back({kQuestionOverlap, 1.0});
      if (!norm[i].empty())
        for (const auto& q : terms) t.push_back({hashed_index("q-span", q, norm[i], dim), 1.0});
    }

    length_features_.assign(n + 1, {});
    for (std::size_t l = 1; l <= n; ++l) {
      const auto bucket = std::to_string(std::min<std::size_t>(l, static_cast<std::size_t>(options_.max_span_tokens) + 1));
      length_features_[l] = {{kSpanLength, static_cast<double>(l)},
                             {kLogSpanLength, std::log(static_cast<double>(l))},
                             {hashed_index("len", bucket, "", dim), 1.0}};
    }

    std::size_t covered = 0;
    no_answer_features_ = {{kNoAnswer, 1.0}};
    for (const auto& q : terms) {
      const bool found = context_terms.count(q) > 0;
      covered += found;
      no_answer_features_.push_back({hashed_index("q-noans", q, found ? "+" : "-", dim), 1.0});
    }
    // Words introducing the question's terms in the context.
    std::unordered_set<std::string_view> lead_ins;
    for (std::size_t i = 0; i < n; ++i)
      if (in_question(i)) lead_ins.insert(i == 0 ? std::string_view(kBos) : std::string_view(raw[i - 1]));
    for (const auto& w : lead_ins) no_answer_features_.push_back({hashed_index("noans-prev", w, "", dim), 1.0});
    if (!terms.empty())
      no_answer_features_.push_back(
          {kQuestionCoverage, static_cast<double>(covered) / static_cast<double>(terms.size())});
  }

  void build_candidates() {
    candidates_.clear();
    Candidate none;
    none.no_answer = true;
    candidates_.push_back(none);
    const auto max_len = static_cast<uint32_t>(std::max(0, std::min(options_.max_span_tokens, options_.max_target_tokens)));
    const auto n = static_cast<uint32_t>(tokens_.size());
    std::unordered_set<std::string_view> seen;
    for (uint32_t s = 0; s < n; ++s) {
      for (uint32_t e = s; e < n && e - s + 1 <= max_len; ++e) {
        Candidate c;
        c.first = s;
        c.last = e;
        if (seen.insert(text_of(c)).second) candidates_.push_back(c);
      }
    }
  }

  PolicyOptions options_;
  std::string context_;
  std::string question_;
  std::vector<text::Token> tokens_;
  bool truncated_ = false;

  std::vector<std::vector<Feature>> start_features_;
  std::vector<std::vector<Feature>> end_features_;
  std::vector<std::vector<Feature>> token_features_;
  std::vector<std::vector<Feature>> length_features_;
  std::vector<Feature> no_answer_features_;

  std::vector<Candidate> candidates_;
  std::vector<std::string> injected_texts_;
};

// -- Softmax ----------------------------------------------------------------

inline double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

/// log pi(candidate k) for every candidate.
inline std::vector<double> log_softmax(const std::vector<double>& scores) {
  const double z = log_sum_exp(scores);
  std::vector<double> out(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) out[k] = scores[k] - z;
  return out;
}

inline Example make_example(const QaRecord& record, const PolicyOptions& options) {
  return Example(record.context, record.question, options);
}

inline Example make_example(const Prompt& prompt, const PolicyOptions& options) {
  auto [context, question] = parse_prompt(prompt.text);
  return Example(context, question, options);
}

inline std::size_t require_candidate(const Example& ex, std::string_view candidate) {
  auto k = ex.find(candidate);
  if (!k) throw ValidationError("candidate '" + std::string(candidate) + "' is not in the prompt's candidate set");
  return *k;
}

/// Features of `candidate` for `prompt`.
inline FeatureVector featurize(const Prompt& prompt, std::string_view candidate,
                               const PolicyOptions& options = {}) {
  const Example ex = make_example(prompt, options);
  return ex.features(require_candidate(ex, candidate));
}

inline double log_prob(const PolicyParams& params, const Example& ex, std::size_t k) {
  const auto scores = ex.scores(params.weights);
  return scores[k] - log_sum_exp(scores);
}

inline double log_prob(const PolicyParams& params, const Prompt& prompt, std::string_view candidate) {
  const Example ex = make_example(prompt, params.options);
  return log_prob(params, ex, require_candidate(ex, candidate));
}

/// Argmax candidate. Ties go to the earlier start, then the shorter span;
/// "" wins only when strictly more probable than every span.
inline std::size_t predict_index(const std::vector<double>& scores, const Example& ex) {
  std::size_t best = 0;
  bool have_span = false;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (ex.candidates()[k].injected >= 0) continue;
    if (!have_span || scores[k] > scores[best]) {
      best = k;
      have_span = true;
    }
  }
  if (!have_span || scores[0] > scores[best]) return 0;
  return best;
}

inline std::string predict(const PolicyParams& params, const Example& ex) {
  return std::string(ex.text_of(predict_index(ex.scores(params.weights), ex)));
}

inline std::string predict(const PolicyParams& params, const Prompt& prompt) {
  return predict(params, make_example(prompt, params.options));
}

inline std::unordered_map<std::string, std::string> predict_corpus(const PolicyParams& params,
                                                                   const std::vector<Example>& examples,
                                                                   const Corpus& corpus) {
  std::unordered_map<std::string, std::string> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) out[corpus.records[i].id] = predict(params, examples[i]);
  return out;
}

inline std::unordered_map<std::string, std::string> predict_corpus(const PolicyParams& params,
                                                                   const Corpus& corpus) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& r : corpus.records) out[r.id] = predict(params, make_example(r, params.options));
  return out;
}

inline std::vector<Example> make_examples(const Corpus& corpus, const PolicyOptions& options) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records) out.push_back(make_example(r, options));
  return out;
}

// -- Persistence ------------------------------------------------------------

inline constexpr char kParamsMagic[8] = {'M', 'R', 'C', 'P', 'O', 'L', '0', '1'};

inline std::string params_to_bytes(const PolicyParams& p) {
  std::string out(kParamsMagic, sizeof kParamsMagic);
  auto put = [&](const void* data, std::size_t n) { out.append(static_cast<const char*>(data), n); };
  const auto version = static_cast<uint32_t>(p.schema_version);
  const auto dim = static_cast<uint64_t>(p.weights.size());
  put(&version, sizeof version);
  put(&dim, sizeof dim);
  put(p.weights.data(), p.weights.size() * sizeof(double));
  return out;
}

inline json params_metadata(const PolicyParams& p, std::string_view weights_sha256) {
  return {{"schema_version", p.schema_version},
          {"seed", p.seed},
          {"dim", p.weights.size()},
          {"max_span_tokens", p.options.max_span_tokens},
          {"max_prompt_tokens", p.options.max_prompt_tokens},
          {"max_target_tokens", p.options.max_target_tokens},
          {"weights_sha256", weights_sha256}};
}

/// Writes `path` (binary weights) and `path.json` (metadata sidecar).
inline void save_params(const PolicyParams& p, const std::string& path, const json& extra = json::object()) {
  const std::string bytes = params_to_bytes(p);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  json meta = params_metadata(p, sha256_hex(bytes));
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw RuntimeFailure("cannot write '" + path + ".json'");
  side << meta.dump(2) << "\n";
}

inline PolicyParams load_params(const std::string& path) {
  const std::string bytes = read_file(path);
  constexpr std::size_t header = sizeof kParamsMagic + sizeof(uint32_t) + sizeof(uint64_t);
  if (bytes.size() < header || std::memcmp(bytes.data(), kParamsMagic, sizeof kParamsMagic) != 0)
    throw ValidationError("'" + path + "' is not a policy parameter file");
  uint32_t version = 0;
  uint64_t dim = 0;
  std::memcpy(&version, bytes.data() + sizeof kParamsMagic, sizeof version);
  std::memcpy(&dim, bytes.data() + sizeof kParamsMagic + sizeof version, sizeof dim);
  if (version != kSchemaVersion)
    throw ValidationError("unsupported policy schema version " + std::to_string(version));
  if (bytes.size() != header + dim * sizeof(double))
    throw ValidationError("'" + path + "' is truncated");

  PolicyParams p;
  p.schema_version = static_cast<int>(version);
  p.weights.resize(dim);
  std::memcpy(p.weights.data(), bytes.data() + header, dim * sizeof(double));
  p.options.dim = dim;

  std::ifstream side(path + ".json");
  if (side) {
    const json meta = json::parse(side);
    p.seed = meta.value("seed", uint64_t{0});
    p.options.max_span_tokens = meta.value("max_span_tokens", p.options.max_span_tokens);
    p.options.max_prompt_tokens = meta.value("max_prompt_tokens", p.options.max_prompt_tokens);
    p.options.max_target_tokens = meta.value("max_target_tokens", p.options.max_target_tokens);
    if (meta.contains("weights_sha256") && meta["weights_sha256"] != sha256_hex(bytes))
      throw ValidationError("'" + path + "' does not match its sidecar digest");
  }
  if (!p.all_finite()) throw ValidationError("'" + path + "' contains non-finite weights");
  return p;
}

}  // namespace mrcdpo::policy
