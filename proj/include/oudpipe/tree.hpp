#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace oudpipe {

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0;       // go left when value <= threshold
  std::int32_t left = -1, right = -1;
  double value = 0;  // leaf payload: class fraction or regression value
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> row) const {
    std::int32_t i = 0;
    while (nodes[i].feature >= 0)
      i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }
};

/// Per-feature value binning shared by all trees trained on one dataset. With at
/// most `max_bins` distinct values per feature the binning is exact and split
/// thresholds are the midpoints of consecutive unique values.
struct BinnedData {
  std::size_t n_rows = 0, n_cols = 0;
  std::vector<std::uint8_t> codes;            // row-major bin index
  std::vector<std::vector<double>> cuts;      // sorted representative values per feature

  static BinnedData build(const std::vector<double>& values, std::size_t n_cols,
                          std::size_t max_bins = 64) {
    BinnedData b;
    b.n_cols = n_cols;
    b.n_rows = n_cols ? values.size() / n_cols : 0;
    b.cuts.resize(n_cols);
    b.codes.resize(values.size());
    std::vector<double> col(b.n_rows);
    for (std::size_t c = 0; c < n_cols; ++c) {
      for (std::size_t r = 0; r < b.n_rows; ++r) col[r] = values[r * n_cols + c];
      std::sort(col.begin(), col.end());
      auto& cuts = b.cuts[c];
      cuts.clear();
      for (double v : col)
        if (cuts.empty() || v != cuts.back()) cuts.push_back(v);
      if (cuts.size() > max_bins) {
        std::vector<double> reduced;
        reduced.reserve(max_bins);
        for (std::size_t i = 0; i < max_bins; ++i)
          reduced.push_back(cuts[i * (cuts.size() - 1) / (max_bins - 1)]);
        reduced.erase(std::unique(reduced.begin(), reduced.end()), reduced.end());
        cuts = std::move(reduced);
      }
      for (std::size_t r = 0; r < b.n_rows; ++r) {
        const double v = values[r * n_cols + c];
        auto it = std::upper_bound(cuts.begin(), cuts.end(), v);
        const std::size_t bin = it == cuts.begin() ? 0 : (it - cuts.begin() - 1);
        b.codes[r * n_cols + c] = static_cast<std::uint8_t>(bin);
      }
    }
    return b;
  }

  double threshold(std::size_t col, std::size_t bin) const {
    return (cuts[col][bin] + cuts[col][bin + 1]) / 2.0;
  }
  std::size_t bins(std::size_t col) const { return cuts[col].size(); }
};

struct TreeGrowth {
  int max_depth = 12;
  int min_leaf = 5;
  int mtry = 0;  // features considered per split; 0 = all
};

/// Grows classification (Gini) and regression (Newton gain) trees over binned data.
class TreeTrainer {
 public:
  TreeTrainer(const BinnedData& data, TreeGrowth growth) : data_(data), growth_(growth) {}

  /// y in {0,1}. importance, when given, accumulates weighted impurity decrease per feature.
  DecisionTree fit_classification(const std::vector<int>& y, std::vector<std::uint32_t> rows,
                                  std::mt19937_64& rng, std::vector<double>* importance = nullptr) {
    y_ = &y;
    grad_ = hess_ = nullptr;
    return fit(std::move(rows), rng, importance);
  }

  /// Fits leaf values sum(grad)/sum(hess); split gain is the Newton score increase.
  DecisionTree fit_regression(const std::vector<double>& grad, const std::vector<double>& hess,
                              std::vector<std::uint32_t> rows, std::mt19937_64& rng,
                              std::vector<double>* importance = nullptr) {
    y_ = nullptr;
    grad_ = &grad;
    hess_ = &hess;
    return fit(std::move(rows), rng, importance);
  }

 private:
  struct Stats {
    double n = 0, a = 0, b = 0;  // classification: a = positives; regression: a = G, b = H
  };

  DecisionTree fit(std::vector<std::uint32_t> rows, std::mt19937_64& rng,
                   std::vector<double>* importance) {
    tree_ = DecisionTree{};
    total_rows_ = static_cast<double>(rows.size());
    importance_ = importance;
    feature_pool_.resize(data_.n_cols);
    std::iota(feature_pool_.begin(), feature_pool_.end(), 0u);
    grow(rows.data(), rows.size(), 0, rng);
    return std::move(tree_);
  }

  Stats node_stats(const std::uint32_t* rows, std::size_t n) const {
    Stats s;
    s.n = static_cast<double>(n);
    if (y_) {
      long pos = 0;
      for (std::size_t i = 0; i < n; ++i) pos += (*y_)[rows[i]];
      s.a = static_cast<double>(pos);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        s.a += (*grad_)[rows[i]];
        s.b += (*hess_)[rows[i]];
      }
    }
    return s;
  }

  // Higher is better; gain is parent-relative.
  double score(const Stats& s) const {
    if (y_) {
      if (s.n == 0) return 0;
      const double p = s.a / s.n;
      return -s.n * 2.0 * p * (1.0 - p);  // negative weighted Gini
    }
    return s.b > 0 ? s.a * s.a / s.b : 0;
  }

  double leaf_value(const Stats& s) const {
    if (y_) return s.n > 0 ? s.a / s.n : 0.0;
    return s.b > 0 ? s.a / s.b : 0.0;
  }

  std::int32_t grow(std::uint32_t* rows, std::size_t n, int depth, std::mt19937_64& rng) {
    const Stats total = node_stats(rows, n);
    const std::int32_t id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes[id].value = leaf_value(total);
    const bool pure = y_ && (total.a == 0 || total.a == total.n);
    if (depth >= growth_.max_depth || n < 2 * static_cast<std::size_t>(growth_.min_leaf) || pure)
      return id;

    // Feature subset for this split, scanned in ascending index order for
    // deterministic tie-breaking (lowest feature, then lowest threshold).
    std::size_t n_try = growth_.mtry > 0
                            ? std::min<std::size_t>(growth_.mtry, data_.n_cols)
                            : data_.n_cols;
    if (n_try < data_.n_cols) {
      for (std::size_t i = 0; i < n_try; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, data_.n_cols - 1);
        std::swap(feature_pool_[i], feature_pool_[d(rng)]);
      }
      std::sort(feature_pool_.begin(), feature_pool_.begin() + n_try);
    }

    const double parent_score = score(total);
    double best_gain = 1e-12;
    std::int32_t best_feature = -1;
    std::size_t best_bin = 0;
    Stats hist[256];
    for (std::size_t t = 0; t < n_try; ++t) {
      const std::uint32_t f = feature_pool_[t];
      const std::size_t nbins = data_.bins(f);
      if (nbins < 2) continue;
      for (std::size_t b = 0; b < nbins; ++b) hist[b] = Stats{};
      if (y_) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint8_t b = data_.codes[static_cast<std::size_t>(rows[i]) * data_.n_cols + f];
          hist[b].n += 1;
          hist[b].a += (*y_)[rows[i]];
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint8_t b = data_.codes[static_cast<std::size_t>(rows[i]) * data_.n_cols + f];
          hist[b].n += 1;
          hist[b].a += (*grad_)[rows[i]];
          hist[b].b += (*hess_)[rows[i]];
        }
      }
      Stats left{};
      for (std::size_t b = 0; b + 1 < nbins; ++b) {
        left.n += hist[b].n;
        left.a += hist[b].a;
        left.b += hist[b].b;
        if (left.n < growth_.min_leaf || total.n - left.n < growth_.min_leaf) continue;
        Stats right{total.n - left.n, total.a - left.a, total.b - left.b};
        const double gain = score(left) + score(right) - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<std::int32_t>(f);
          best_bin = b;
        }
      }
    }
    if (best_feature < 0) return id;

    if (importance_)
      (*importance_)[best_feature] += best_gain * (y_ ? 1.0 / (2.0 * total_rows_) : 1.0);

    const double thr = data_.threshold(best_feature, best_bin);
    auto mid = std::stable_partition(rows, rows + n, [&](std::uint32_t r) {
      return data_.codes[static_cast<std::size_t>(r) * data_.n_cols + best_feature] <= best_bin;
    });
    const std::size_t n_left = static_cast<std::size_t>(mid - rows);
    tree_.nodes[id].feature = best_feature;
    tree_.nodes[id].threshold = thr;
    const std::int32_t l = grow(rows, n_left, depth + 1, rng);
    const std::int32_t r = grow(rows + n_left, n - n_left, depth + 1, rng);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  const BinnedData& data_;
  TreeGrowth growth_;
  const std::vector<int>* y_ = nullptr;
  const std::vector<double>* grad_ = nullptr;
  const std::vector<double>* hess_ = nullptr;
  DecisionTree tree_;
  double total_rows_ = 0;
  std::vector<double>* importance_ = nullptr;
  std::vector<std::uint32_t> feature_pool_;
};

}  // namespace oudpipe
