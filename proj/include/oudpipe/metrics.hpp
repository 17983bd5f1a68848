#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "oudpipe/csv.hpp"

namespace oudpipe {

// y vectors here use the internal encoding: 1 = OUD (positive), 0 = NOUD.

struct SplitIndices {
  std::vector<std::size_t> train, test;
};

/// Stratified 70/30-style split: class proportions in test within one sample of
/// exact proportionality. Deterministic per seed.
inline SplitIndices split_indices(const std::vector<int>& y, double test_fraction, std::uint64_t seed) {
  if (y.empty()) throw std::invalid_argument("empty labels");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
  if (pos.size() < 2 || neg.size() < 2) throw std::invalid_argument("each class needs >= 2 members");
  std::mt19937_64 rng(seed);
  SplitIndices out;
  for (auto* cls : {&pos, &neg}) {
    std::shuffle(cls->begin(), cls->end(), rng);
    const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * cls->size()));
    for (std::size_t i = 0; i < cls->size(); ++i)
      (i < n_test ? out.test : out.train).push_back((*cls)[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;  // positive class = OUD
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  bool zero_predicted = false;  // precision reported as 0 with this warning flag
};

struct PrfReport {
  ConfusionCounts counts;
  ClassMetrics oud, noud;
};

inline PrfReport confusion_and_prf(const std::vector<int>& y, const std::vector<int>& predicted) {
  if (y.empty()) throw std::invalid_argument("empty input");
  if (y.size() != predicted.size()) throw std::invalid_argument("length mismatch");
  PrfReport r;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] && predicted[i]) ++r.counts.tp;
    else if (!y[i] && predicted[i]) ++r.counts.fp;
    else if (y[i] && !predicted[i]) ++r.counts.fn;
    else ++r.counts.tn;
  }
  auto fill = [](ClassMetrics& m, double tp, double fp, double fn) {
    if (tp + fp == 0) {
      m.precision = 0;
      m.zero_predicted = true;
    } else {
      m.precision = tp / (tp + fp);
    }
    m.recall = (tp + fn == 0) ? 0 : tp / (tp + fn);
    m.f1 = (m.precision + m.recall == 0) ? 0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  };
  fill(r.oud, r.counts.tp, r.counts.fp, r.counts.fn);
  fill(r.noud, r.counts.tn, r.counts.fn, r.counts.fp);
  return r;
}

struct RocPoint {
  double fpr, tpr, threshold;
};

struct RocResult {
  double auc = 0;
  std::vector<RocPoint> points;
};

/// Rank-statistic AUC: fraction of (positive, negative) pairs where the positive
/// outscores the negative, ties counting one half. Exact integer accounting, so it
/// agrees with brute-force pair enumeration bit for bit.
inline RocResult roc_auc(const std::vector<int>& y, const std::vector<double>& scores) {
  if (y.size() != scores.size()) throw std::invalid_argument("length mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int v : y) (v ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("both classes required");

  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult res;
  // Walk thresholds high to low; within a tie group count pos/neg together.
  std::uint64_t twice_wins = 0;  // 2*wins + ties
  std::size_t seen_neg = 0;
  std::size_t cum_tp = 0, cum_fp = 0;
  res.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t g_pos = 0, g_neg = 0;
    const double thr = scores[order[i]];
    while (j < order.size() && scores[order[j]] == thr) {
      (y[order[j]] ? g_pos : g_neg)++;
      ++j;
    }
    // positives in this group beat all negatives not yet seen except ties in-group
    twice_wins += 2ull * g_pos * (n_neg - seen_neg - g_neg) + 1ull * g_pos * g_neg;
    seen_neg += g_neg;
    cum_tp += g_pos;
    cum_fp += g_neg;
    res.points.push_back({static_cast<double>(cum_fp) / n_neg, static_cast<double>(cum_tp) / n_pos, thr});
    i = j;
  }
  res.auc = static_cast<double>(twice_wins) / (2.0 * n_pos * n_neg);
  return res;
}

/// Trapezoidal area under the ROC points; cross-check for the rank AUC.
inline double trapezoid_auc(const std::vector<RocPoint>& pts) {
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return area;
}

struct MetricsReport {
  std::string model;
  std::string stage;  // "chi2" or "rfe"
  std::string split;  // "train" or "test"
  PrfReport prf;
  double auc = 0;
  std::vector<RocPoint> roc;
};

inline MetricsReport evaluate_scores(const std::vector<int>& y, const std::vector<double>& scores,
                                     double threshold = 0.5) {
  std::vector<int> pred(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
  MetricsReport rep;
  rep.prf = confusion_and_prf(y, pred);
  auto roc = roc_auc(y, scores);
  rep.auc = roc.auc;
  rep.roc = std::move(roc.points);
  return rep;
}

inline void write_roc_csv(const std::vector<RocPoint>& pts, std::ostream& out) {
  out << "fpr,tpr,threshold\n";
  for (const auto& p : pts)
    out << fmt_double(p.fpr) << "," << fmt_double(p.tpr) << "," << fmt_double(p.threshold) << "\n";
}

/// Table-style cross-model comparison, one row per (model, stage, split).
inline void compare_models(const std::vector<MetricsReport>& reports, std::ostream& out) {
  if (reports.size() < 2) throw std::invalid_argument("need at least 2 reports to compare");
  out << "model,stage,split,precision_oud,recall_oud,f1_oud,precision_noud,recall_noud,f1_noud,auc\n";
  for (const auto& r : reports) {
    out << r.model << "," << r.stage << "," << r.split << "," << fmt_double(r.prf.oud.precision) << ","
        << fmt_double(r.prf.oud.recall) << "," << fmt_double(r.prf.oud.f1) << ","
        << fmt_double(r.prf.noud.precision) << "," << fmt_double(r.prf.noud.recall) << ","
        << fmt_double(r.prf.noud.f1) << "," << fmt_double(r.auc) << "\n";
  }
}

}  // namespace oudpipe
