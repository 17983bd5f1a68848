#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace oudpipe {

struct SmoteConfig {
  int k_neighbors = 5;
  double target_ratio = 1.0;  // minority/majority after augmentation
  std::uint64_t seed = 0;
  bool standardize_distances = false;

  void validate() const {
    if (k_neighbors < 1) throw std::invalid_argument("k_neighbors must be >= 1");
    if (!(target_ratio > 0.0) || target_ratio > 1.0)
      throw std::invalid_argument("target_ratio must be in (0, 1]");
  }
};

struct SmoteResult {
  std::vector<double> values;  // row-major, originals first then synthetics
  std::vector<int> y;
  std::size_t n_original = 0;
  std::size_t n_synthetic = 0;
};

/// SMOTE oversampling of the minority class (y == minority label, inferred as the
/// rarer one). Each synthetic sample interpolates a random minority row toward one
/// of its k nearest minority neighbors.
inline SmoteResult smote(const std::vector<double>& values, std::size_t n_cols,
                         const std::vector<int>& y, const SmoteConfig& config) {
  config.validate();
  if (values.empty() || y.empty()) throw std::invalid_argument("empty matrix");
  const std::size_t n_rows = y.size();
  if (values.size() != n_rows * n_cols) throw std::invalid_argument("shape mismatch");

  std::size_t n_pos = 0;
  for (int v : y) n_pos += v != 0;
  const int minority_label = (n_pos * 2 <= n_rows) ? 1 : 0;
  std::vector<std::size_t> minority, majority;
  for (std::size_t i = 0; i < n_rows; ++i)
    ((y[i] != 0) == (minority_label == 1) ? minority : majority).push_back(i);
  if (minority.size() < 2) throw std::invalid_argument("minority class needs >= 2 members");

  const std::size_t m = minority.size();
  const std::size_t target = static_cast<std::size_t>(config.target_ratio * majority.size());
  const std::size_t need = target > m ? target - m : 0;

  std::vector<double> scale(n_cols, 1.0);
  if (config.standardize_distances) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      double mean = 0, sq = 0;
      for (auto r : minority) mean += values[r * n_cols + c];
      mean /= m;
      for (auto r : minority) {
        const double d = values[r * n_cols + c] - mean;
        sq += d * d;
      }
      const double sd = std::sqrt(sq / m);
      if (sd > 0) scale[c] = 1.0 / sd;
    }
  }

  // k nearest minority neighbors of each minority row (Euclidean), brute force.
  const int k = std::min<int>(config.k_neighbors, static_cast<int>(m) - 1);
  std::vector<std::vector<std::size_t>> neighbors(m);
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(m - 1);
    const double* ra = &values[minority[a] * n_cols];
    for (std::size_t b = 0; b < m; ++b) {
      if (b == a) continue;
      const double* rb = &values[minority[b] * n_cols];
      double d2 = 0;
      for (std::size_t c = 0; c < n_cols; ++c) {
        const double d = (ra[c] - rb[c]) * scale[c];
        d2 += d * d;
      }
      dist.emplace_back(d2, b);
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    neighbors[a].reserve(k);
    for (int i = 0; i < k; ++i) neighbors[a].push_back(dist[i].second);
  }

  SmoteResult out;
  out.values = values;
  out.y = y;
  out.n_original = n_rows;
  out.n_synthetic = need;
  out.values.reserve((n_rows + need) * n_cols);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_row(0, m - 1);
  std::uniform_int_distribution<int> pick_nb(0, k - 1);
  std::uniform_real_distribution<double> gap(0.0, 1.0);
  for (std::size_t s = 0; s < need; ++s) {
    const std::size_t a = pick_row(rng);
    const std::size_t b = neighbors[a][pick_nb(rng)];
    const double g = gap(rng);
    const double* ra = &values[minority[a] * n_cols];
    const double* rb = &values[minority[b] * n_cols];
    for (std::size_t c = 0; c < n_cols; ++c) out.values.push_back(ra[c] + g * (rb[c] - ra[c]));
    out.y.push_back(minority_label);
  }
  return out;
}

}  // namespace oudpipe
