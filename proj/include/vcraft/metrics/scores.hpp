#pragma once

// Distances between reference and generated features, and the symbol
// error rate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "vcraft/errors.hpp"
#include "vcraft/metrics/dtw.hpp"
#include "vcraft/metrics/features.hpp"

namespace vcraft {

// (10 / ln 10) * sqrt(0.5 * sum_i (g_i - r_i)^2) for one frame pair.
inline double mcd_frame(const std::vector<double>& ref, const std::vector<double>& gen) {
  const double d = euclidean(ref, gen);
  return 10.0 / std::numbers::ln10 * std::sqrt(0.5) * d;
}

// Mean per-pair MCD along the Euclidean DTW path.
inline double mcd(const FeatureSeq& ref, const FeatureSeq& gen) {
  const DtwResult al =
      dtw_align(ref.size(), gen.size(), [&](std::size_t i, std::size_t j) { return euclidean(ref[i], gen[j]); });
  double sum = 0.0;
  for (const auto& [i, j] : al.path) sum += mcd_frame(ref[i], gen[j]);
  return sum / static_cast<double>(al.path.size());
}

// Mean Euclidean distance along the DTW path.
inline double aligned_distance(const FeatureSeq& ref, const FeatureSeq& gen) {
  const DtwResult al =
      dtw_align(ref.size(), gen.size(), [&](std::size_t i, std::size_t j) { return euclidean(ref[i], gen[j]); });
  return al.cost / static_cast<double>(al.path.size());
}

inline double aligned_distance(std::span<const double> ref, std::span<const double> gen) {
  const DtwResult al = dtw_align(ref.size(), gen.size(),
                                 [&](std::size_t i, std::size_t j) { return std::abs(ref[i] - gen[j]); });
  return al.cost / static_cast<double>(al.path.size());
}

template <class T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <class T>
double symbol_error_rate(std::span<const T> ref, std::span<const T> hyp) {
  return static_cast<double>(levenshtein(ref, hyp)) /
         static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

template <class T>
double symbol_error_rate(const std::vector<T>& ref, const std::vector<T>& hyp) {
  return symbol_error_rate(std::span<const T>(ref), std::span<const T>(hyp));
}

}  // namespace vcraft
