#pragma once

// Dynamic time warping with steps (1,0), (0,1), (1,1) and unit weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "vcraft/errors.hpp"

namespace vcraft {

struct DtwResult {
  std::vector<std::pair<std::size_t, std::size_t>> path;  // from (0,0) to (n-1,m-1)
  double cost = 0.0;                                       // sum of local costs on the path
};

// dist(i, j) gives the local cost of pairing a[i] with b[j]. Backtrace
// prefers the diagonal, then the step in a, then the step in b.
template <class Dist>
DtwResult dtw_align(std::size_t n, std::size_t m, Dist&& dist) {
  if (n == 0 || m == 0) throw InvalidInput("dtw needs two non-empty sequences");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(n * m, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = dist(i, j);
      if (i == 0 && j == 0) {
        at(i, j) = c;
        continue;
      }
      double best = inf;
      if (i > 0 && j > 0) best = at(i - 1, j - 1);
      if (i > 0) best = std::min(best, at(i - 1, j));
      if (j > 0) best = std::min(best, at(i, j - 1));
      at(i, j) = best + c;
    }
  }
  DtwResult res;
  res.cost = at(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  res.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double d = at(i - 1, j - 1), up = at(i - 1, j), left = at(i, j - 1);
      if (d <= up && d <= left) {
        --i, --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    } else if (i > 0) {
      --i;
    } else {
      --j;
    }
    res.path.emplace_back(i, j);
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidInput("feature vectors differ in dimension");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace vcraft
