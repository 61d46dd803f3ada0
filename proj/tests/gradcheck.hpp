#pragma once

// Finite-difference probes of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mrcdpo/pref_opt.hpp"
#include "mrcdpo/sft.hpp"

namespace testing {

struct Probe {
  double analytic = 0.0;
  double numeric = 0.0;

  double relative_error() const {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
  }
};

using Objective = std::function<double(const std::vector<double>&)>;

/// Five-point central difference of `f` along coordinate `j`.
inline double central_difference(const Objective& f, std::vector<double> w, std::size_t j, double h = 1e-3) {
  const double w0 = w[j];
  auto at = [&](double d) {
    w[j] = w0 + d;
    return f(w);
  };
  return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
}

/// Coordinates with a non-negligible analytic gradient, shuffled.
inline std::vector<std::size_t> active_coordinates(const std::vector<double>& grad, std::mt19937_64& rng,
                                                   double floor = 1e-4) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < grad.size(); ++j)
    if (std::abs(grad[j]) > floor) out.push_back(j);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

inline std::vector<double> random_weights(std::size_t dim, std::mt19937_64& rng, double scale = 0.3) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> w(dim);
  for (auto& x : w) x = normal(rng);
  return w;
}

/// Probes the SFT loss gradient at random weights on `count` coordinates.
inline std::vector<Probe> probe_sft(const std::vector<mrcdpo::SupervisedExample>& data, std::size_t dim,
                                    std::size_t count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto w = random_weights(dim, rng);
  std::vector<std::size_t> batch(data.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  std::vector<double> grad(dim, 0.0);
  mrcdpo::sft_loss(w, data, batch, &grad);
  const Objective f = [&](const std::vector<double>& x) { return mrcdpo::sft_loss(x, data, batch, nullptr); };
  std::vector<Probe> out;
  for (std::size_t j : active_coordinates(grad, rng)) {
    if (out.size() == count) break;
    out.push_back({grad[j], central_difference(f, w, j)});
  }
  return out;
}

/// Probes one preference loss through log_prob. Reference log-probs come
/// from a second random policy so the margin is nonzero.
inline std::vector<Probe> probe_preference(mrcdpo::pref::LossKind kind, double beta,
                                           const mrcdpo::pref::PreferenceData& data, std::size_t dim,
                                           std::size_t count, uint64_t seed) {
  using namespace mrcdpo;
  std::mt19937_64 rng(seed);
  policy::PolicyParams ref;
  ref.weights = random_weights(dim, rng);
  const auto theta = random_weights(dim, rng);
  const auto ref_lp = pref::reference_logps(ref, data);
  pref::LossConfig cfg;
  cfg.kind = kind;
  cfg.beta = beta;
  std::vector<std::size_t> batch(data.items.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  std::vector<double> grad(dim, 0.0);
  pref::preference_batch_loss(cfg, theta, data, ref_lp, batch, &grad);
  const Objective f = [&](const std::vector<double>& x) {
    return pref::preference_batch_loss(cfg, x, data, ref_lp, batch, nullptr);
  };
  std::vector<Probe> out;
  for (std::size_t j : active_coordinates(grad, rng)) {
    if (out.size() == count) break;
    out.push_back({grad[j], central_difference(f, theta, j)});
  }
  return out;
}

}  // namespace testing
