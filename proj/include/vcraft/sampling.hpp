#pragma once

// Token sampling: temperature, consecutive-repetition damping and nucleus
// (top-p) truncation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vcraft/errors.hpp"

namespace vcraft {

struct SamplingConfig {
  double top_p = 0.8;
  double temperature = 1.0;
  double repetition_gamma = 0.5;
  std::size_t max_generated_steps = 300;  // per masked span
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampling.top_p must be in (0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("sampling.temperature must be positive");
    if (!(repetition_gamma >= 0.0)) throw ConfigError("sampling.repetition_gamma must be >= 0");
    if (max_generated_steps < 1) throw ConfigError("sampling.max_generated_steps must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const SamplingConfig& c) {
  j = {{"top_p", c.top_p},
       {"temperature", c.temperature},
       {"repetition_gamma", c.repetition_gamma},
       {"max_generated_steps", c.max_generated_steps},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SamplingConfig& c) {
  const SamplingConfig d = c;
  c.top_p = j.value("top_p", d.top_p);
  c.temperature = j.value("temperature", d.temperature);
  c.repetition_gamma = j.value("repetition_gamma", d.repetition_gamma);
  c.max_generated_steps = j.value("max_generated_steps", d.max_generated_steps);
  c.seed = j.value("seed", d.seed);
}

// Consecutive run of the last emitted token on one codebook.
struct RunState {
  int token = -1;
  std::size_t length = 0;

  void update(int t) {
    if (t == token) {
      ++length;
    } else {
      token = t;
      length = 1;
    }
  }
};

// Softmax of (logits / temperature) with the current run token's logit
// lowered by gamma * run length. -inf logits stay excluded.
inline std::vector<double> damped_probabilities(std::span<const double> logits,
                                                const SamplingConfig& cfg, const RunState& run) {
  std::vector<double> z(logits.begin(), logits.end());
  for (double& v : z) v /= cfg.temperature;
  if (run.length > 0 && run.token >= 0 && static_cast<std::size_t>(run.token) < z.size()) {
    z[static_cast<std::size_t>(run.token)] -= cfg.repetition_gamma * static_cast<double>(run.length);
  }
  const double m = *std::max_element(z.begin(), z.end());
  if (!std::isfinite(m)) throw InvalidInput("no finite logit to sample from");
  double sum = 0.0;
  for (double& v : z) {
    v = std::isinf(v) && v < 0 ? 0.0 : std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

// Smallest prefix of ids sorted by descending probability (ties by id)
// whose mass reaches p; the crossing id is included. Returns (id, renormalized
// probability) pairs in that order.
inline std::vector<std::pair<int, double>> nucleus(std::span<const double> probs, double p) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::vector<std::pair<int, double>> kept;
  double mass = 0.0;
  for (int id : order) {
    const double q = probs[static_cast<std::size_t>(id)];
    if (q <= 0.0) break;
    kept.emplace_back(id, q);
    mass += q;
    if (mass >= p - 1e-9) break;
  }
  for (auto& kv : kept) kv.second /= mass;
  return kept;
}

template <class Rng>
int sample_token(std::span<const double> logits, const SamplingConfig& cfg, const RunState& run,
                 Rng& rng) {
  const auto probs = damped_probabilities(logits, cfg, run);
  const auto kept = nucleus(probs, cfg.top_p);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  for (const auto& [id, q] : kept) {
    acc += q;
    if (u < acc) return id;
  }
  return kept.back().first;
}

}  // namespace vcraft
