#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oudpipe/matrix.hpp"
#include "oudpipe/metrics.hpp"
#include "oudpipe/models.hpp"
#include "oudpipe/smote.hpp"

namespace oudpipe {

struct VarianceFilterResult {
  std::vector<std::size_t> kept;      // column indices into the input matrix
  std::vector<double> variances;      // per input column
};

/// Keep column j iff its population variance is >= threshold.
inline VarianceFilterResult variance_filter(const FeatureMatrix& m, double threshold = 0.03) {
  if (m.rows() == 0) throw std::invalid_argument("empty matrix");
  VarianceFilterResult res;
  res.variances.resize(m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double mean = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) mean += m.at(r, c);
    mean /= m.rows();
    double var = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const double d = m.at(r, c) - mean;
      var += d * d;
    }
    var /= m.rows();
    res.variances[c] = var;
    if (var >= threshold) res.kept.push_back(c);
  }
  return res;
}

/// Upper-tail survival of chi-squared with 1 degree of freedom.
inline double chi2_sf_1df(double x) { return std::erfc(std::sqrt(std::max(x, 0.0) / 2.0)); }

struct Chi2FilterResult {
  std::vector<std::size_t> kept;
  std::vector<double> statistics;
  std::vector<double> p_values;
};

/// Class-wise value-sum chi-squared: per feature, observed per-class sums are
/// compared to expectations proportional to class frequencies (1 df, two classes).
inline Chi2FilterResult chi2_filter(const FeatureMatrix& m, const std::vector<int>& y,
                                    double alpha = 0.05) {
  if (m.rows() != y.size()) throw std::invalid_argument("label size mismatch");
  std::size_t n_pos = 0;
  for (int v : y) n_pos += v != 0;
  const std::size_t n = y.size();
  const double f_pos = static_cast<double>(n_pos) / n;
  Chi2FilterResult res;
  res.statistics.resize(m.cols());
  res.p_values.resize(m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double o_pos = 0, total = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const double v = m.at(r, c);
      if (v < 0) throw std::invalid_argument("chi2 filter requires non-negative features");
      total += v;
      if (y[r]) o_pos += v;
    }
    double stat = 0, p = 1.0;
    if (total > 0) {
      const double e_pos = total * f_pos;
      const double e_neg = total - e_pos;
      const double o_neg = total - o_pos;
      if (e_pos > 0) stat += (o_pos - e_pos) * (o_pos - e_pos) / e_pos;
      if (e_neg > 0) stat += (o_neg - e_neg) * (o_neg - e_neg) / e_neg;
      p = chi2_sf_1df(stat);
    }
    res.statistics[c] = stat;
    res.p_values[c] = p;
    if (p < alpha) res.kept.push_back(c);
  }
  return res;
}

struct RfeConfig {
  double prune_fraction = 0.10;
  int folds = 5;
  std::uint64_t seed = 0;
  SmoteConfig smote;        // applied inside each training fold only
  bool apply_smote = true;
  double threshold = 0.5;   // unused by AUC but kept with the evaluation contract
};

struct RfeTrajectoryPoint {
  std::size_t feature_count = 0;
  double mean_cv_auc = 0;
  std::vector<std::string> features;
};

struct RfeResult {
  std::vector<RfeTrajectoryPoint> trajectory;
  std::size_t best_index = 0;  // into trajectory; max AUC, ties -> fewer features

  const RfeTrajectoryPoint& best() const { return trajectory[best_index]; }
};

namespace detail {

/// Stratified fold assignment: per-class shuffle, dealt round-robin.
inline std::vector<int> stratified_folds(const std::vector<int>& y, int k, std::uint64_t seed) {
  std::vector<int> fold(y.size(), 0);
  std::mt19937_64 rng(seed);
  for (int cls : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if ((y[i] != 0) == (cls == 1)) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = static_cast<int>(i % k);
  }
  return fold;
}

inline double mean_cv_auc(const ModelSpec& spec, const FeatureMatrix& m, const std::vector<int>& y,
                          const std::vector<int>& fold, const RfeConfig& cfg) {
  double total = 0;
  int used = 0;
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? test_rows : train_rows).push_back(i);
    std::vector<int> y_test;
    for (auto r : test_rows) y_test.push_back(y[r]);
    bool both = false;
    for (std::size_t i = 1; i < y_test.size(); ++i)
      if (y_test[i] != y_test[0]) both = true;
    if (!both || test_rows.empty()) continue;

    auto train_m = m.select_rows(train_rows);
    auto y_train = train_m.y();
    FittedModel model;
    if (cfg.apply_smote) {
      SmoteConfig sc = cfg.smote;
      sc.seed = mix_seed(cfg.seed, 0xf01d + f);
      auto balanced = smote(train_m.values, train_m.cols(), y_train, sc);
      model = train(spec, balanced.values, train_m.cols(), balanced.y, train_m.feature_names);
    } else {
      model = train(spec, train_m.values, train_m.cols(), y_train, train_m.feature_names);
    }

    std::vector<double> scores;
    scores.reserve(test_rows.size());
    for (auto r : test_rows) scores.push_back(model.predict_proba(m.row(r)));
    total += roc_auc(y_test, scores).auc;
    ++used;
  }
  if (used == 0) throw std::runtime_error("no usable CV folds");
  return total / used;
}

}  // namespace detail

/// Recursive feature elimination: train, rank by weight, drop the bottom
/// ceil(prune_fraction * remaining) each round; the cross-validated AUC is
/// recorded at every feature count.
inline RfeResult rfe(const ModelSpec& spec, const FeatureMatrix& m, const RfeConfig& cfg = {}) {
  if (m.cols() < 1) throw std::invalid_argument("empty feature set");
  const auto y = m.y();
  const auto fold = detail::stratified_folds(y, cfg.folds, detail::mix_seed(cfg.seed, 0xcf01d));

  RfeResult res;
  std::vector<std::size_t> current(m.cols());
  std::iota(current.begin(), current.end(), 0);
  while (true) {
    auto sub = m.select_columns(current);
    RfeTrajectoryPoint pt;
    pt.feature_count = current.size();
    pt.features = sub.feature_names;
    pt.mean_cv_auc = detail::mean_cv_auc(spec, sub, y, fold, cfg);
    res.trajectory.push_back(std::move(pt));
    if (current.size() < 2) break;

    // Rank on the full training data (SMOTE-balanced like the CV folds).
    FittedModel ranking_model;
    if (cfg.apply_smote) {
      SmoteConfig sc = cfg.smote;
      sc.seed = detail::mix_seed(cfg.seed, 0xabcd);
      auto balanced = smote(sub.values, sub.cols(), y, sc);
      ranking_model = train(spec, balanced.values, sub.cols(), balanced.y, sub.feature_names);
    } else {
      ranking_model = train(spec, sub.values, sub.cols(), y, sub.feature_names);
    }
    auto weights = ranking_model.feature_weights();

    const std::size_t n_drop =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.prune_fraction * current.size())));
    std::vector<std::size_t> order(current.size());
    std::iota(order.begin(), order.end(), 0);
    // Ascending weight; equal weights drop the lexicographically last name first.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (weights[a] != weights[b]) return weights[a] < weights[b];
      return sub.feature_names[a] > sub.feature_names[b];
    });
    std::vector<bool> drop(current.size(), false);
    for (std::size_t i = 0; i < n_drop && i < order.size(); ++i) drop[order[i]] = true;
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < current.size(); ++i)
      if (!drop[i]) next.push_back(current[i]);
    if (next.size() < 2) break;
    current = std::move(next);
  }

  res.best_index = 0;
  for (std::size_t i = 1; i < res.trajectory.size(); ++i) {
    const auto& cand = res.trajectory[i];
    const auto& best = res.trajectory[res.best_index];
    if (cand.mean_cv_auc > best.mean_cv_auc ||
        (cand.mean_cv_auc == best.mean_cv_auc && cand.feature_count < best.feature_count))
      res.best_index = i;
  }
  return res;
}

/// The cascade's bookkeeping, serialized as selection_report.json.
struct SelectionReport {
  std::vector<std::string> input_features;
  std::vector<std::string> variance_kept;
  std::vector<double> variances;
  std::vector<std::string> chi2_kept;
  std::vector<double> chi2_statistics;  // over variance-kept features
  std::vector<double> chi2_p_values;
  std::map<std::string, RfeResult> per_model;  // keyed by model kind name
  std::map<std::string, double> mean_p_value_per_model;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["input_features"] = input_features;
    j["variance_stage"] = {{"kept", variance_kept}, {"variances", variances}};
    j["chi2_stage"] = {{"kept", chi2_kept},
                       {"statistics", chi2_statistics},
                       {"p_values", chi2_p_values}};
    nlohmann::json models = nlohmann::json::object();
    for (const auto& [name, r] : per_model) {
      nlohmann::json traj = nlohmann::json::array();
      for (const auto& p : r.trajectory)
        traj.push_back({{"feature_count", p.feature_count},
                        {"mean_cv_auc", p.mean_cv_auc},
                        {"features", p.features}});
      models[name] = {{"trajectory", traj},
                      {"best_feature_count", r.best().feature_count},
                      {"best_mean_cv_auc", r.best().mean_cv_auc},
                      {"best_features", r.best().features}};
    }
    j["rfe"] = models;
    j["mean_chi2_p_value_per_model"] = mean_p_value_per_model;
    return j;
  }
};

}  // namespace oudpipe
