#include <doctest.h>

#include <random>

#include "oudpipe/models.hpp"

using namespace oudpipe;

namespace {

ModelSpec spec_for(ModelKind k, std::uint64_t seed = 0) {
  ModelSpec s;
  s.kind = k;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("logistic separates linearly separable data perfectly") {
  // x < 0 -> class 0, x > 0 -> class 1
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 1; i <= 20; ++i) {
    x.push_back(-i * 0.1);
    y.push_back(0);
    x.push_back(i * 0.1);
    y.push_back(1);
  }
  auto m = train(spec_for(ModelKind::Logistic), x, 1, y);
  CHECK(m.coefficients[0] > 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = m.predict_proba({&x[i], 1});
    CHECK((p >= 0.5 ? 1 : 0) == y[i]);
  }
  // loss trace is recorded and non-increasing
  REQUIRE(m.loss_trace.size() >= 2);
  for (std::size_t i = 1; i < m.loss_trace.size(); ++i)
    CHECK(m.loss_trace[i] <= m.loss_trace[i - 1] + 1e-12);
}

TEST_CASE("logistic gradient matches finite differences") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = 30, d = 3;
  std::vector<double> x(n * d);
  std::vector<int> y;
  for (auto& v : x) v = noise(rng);
  for (std::size_t i = 0; i < n; ++i) y.push_back(i % 2);
  std::vector<double> w = {0.3, -0.7, 0.1};
  const double bias = 0.2, l2 = 0.05, h = 1e-6;
  std::vector<double> grad;
  logistic_loss_grad(x, d, y, w, bias, l2, &grad);
  for (std::size_t c = 0; c < d; ++c) {
    auto wp = w, wm = w;
    wp[c] += h;
    wm[c] -= h;
    const double num = (logistic_loss_grad(x, d, y, wp, bias, l2, nullptr) -
                        logistic_loss_grad(x, d, y, wm, bias, l2, nullptr)) /
                       (2 * h);
    CHECK(grad[c] == doctest::Approx(num).epsilon(1e-5));
  }
  const double numb = (logistic_loss_grad(x, d, y, w, bias + h, l2, nullptr) -
                       logistic_loss_grad(x, d, y, w, bias - h, l2, nullptr)) /
                      (2 * h);
  CHECK(grad[d] == doctest::Approx(numb).epsilon(1e-5));
}

// For a single binary feature the unpenalized MLE odds ratio equals the 2x2
// contingency-table cross ratio (a*d)/(b*c).
TEST_CASE("logistic odds ratio matches the contingency-table oracle") {
  std::vector<double> x;
  std::vector<int> y;
  auto add = [&](double v, int lab, int count) {
    for (int i = 0; i < count; ++i) {
      x.push_back(v);
      y.push_back(lab);
    }
  };
  add(1, 1, 30);
  add(1, 0, 10);
  add(0, 1, 10);
  add(0, 0, 30);
  auto m = train(spec_for(ModelKind::Logistic), x, 1, y, {"exposure"});
  auto ors = odds_ratios(m);
  CHECK(ors.at("exposure") == doctest::Approx(9.0).epsilon(1e-3));  // 30*30 / (10*10)
}

TEST_CASE("odds ratios require the logistic kind") {
  std::vector<double> x = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  std::vector<int> y = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  auto m = train(spec_for(ModelKind::Tree), x, 1, y);
  CHECK_THROWS(odds_ratios(m));
}

TEST_CASE("tree solves xor where the linear model cannot") {
  // near-xor: the slight cell imbalance gives the greedy root split positive gain
  std::vector<double> x;
  std::vector<int> y;
  auto add_cell = [&](int a, int b, int count) {
    for (int i = 0; i < count; ++i) {
      x.push_back(a);
      x.push_back(b);
      y.push_back(a ^ b);
    }
  };
  add_cell(0, 0, 10);
  add_cell(0, 1, 10);
  add_cell(1, 0, 8);
  add_cell(1, 1, 10);
  ModelSpec ts = spec_for(ModelKind::Tree);
  ts.tree.min_leaf = 1;
  auto tree = train(ts, x, 2, y);
  auto linear = train(spec_for(ModelKind::Logistic), x, 2, y);
  std::size_t tree_ok = 0, lin_ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    tree_ok += (tree.predict_proba({&x[i * 2], 2}) >= 0.5 ? 1 : 0) == y[i];
    lin_ok += (linear.predict_proba({&x[i * 2], 2}) >= 0.5 ? 1 : 0) == y[i];
  }
  CHECK(tree_ok == y.size());
  CHECK(lin_ok < tree_ok);  // no linear boundary separates the xor cells
}

TEST_CASE("unsplittable node predicts the class fraction") {
  // constant feature: the tree must stay a single leaf
  std::vector<double> x = {1, 1, 1, 1};
  std::vector<int> y = {1, 1, 1, 0};
  ModelSpec ts = spec_for(ModelKind::Tree);
  ts.tree.min_leaf = 1;
  auto m = train(ts, x, 1, y);
  CHECK(m.trees[0].nodes.size() == 1);
  CHECK(m.predict_proba({&x[0], 1}) == 0.75);
}

// Exhaustive Gini search over every feature and midpoint threshold; the grown
// root split must match (ties resolved to lowest feature then lowest threshold).
namespace {

struct OracleSplit {
  int feature = -1;
  double threshold = 0;
  double gain = 1e-12;
};

double gini_score(double n, double pos) {
  if (n == 0) return 0;
  const double p = pos / n;
  return -n * 2.0 * p * (1.0 - p);
}

OracleSplit best_split_oracle(const std::vector<double>& x, std::size_t d, const std::vector<int>& y,
                              int min_leaf) {
  OracleSplit best;
  const std::size_t n = y.size();
  double total_pos = 0;
  for (int v : y) total_pos += v;
  const double parent = gini_score(n, total_pos);
  for (std::size_t f = 0; f < d; ++f) {
    std::vector<double> uniq;
    for (std::size_t i = 0; i < n; ++i) uniq.push_back(x[i * d + f]);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (std::size_t u = 0; u + 1 < uniq.size(); ++u) {
      const double thr = (uniq[u] + uniq[u + 1]) / 2.0;
      double ln = 0, lp = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (x[i * d + f] <= thr) {
          ln += 1;
          lp += y[i];
        }
      if (ln < min_leaf || n - ln < min_leaf) continue;
      const double gain = gini_score(ln, lp) + gini_score(n - ln, total_pos - lp) - parent;
      if (gain > best.gain) {
        best = {static_cast<int>(f), thr, gain};
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("root split matches exhaustive gini search on random small datasets") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> val(0, 4), lab(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 24, d = 3;
    std::vector<double> x(n * d);
    std::vector<int> y(n);
    for (auto& v : x) v = val(rng);
    bool has0 = false, has1 = false;
    for (auto& v : y) {
      v = lab(rng);
      (v ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    ModelSpec ts = spec_for(ModelKind::Tree);
    ts.tree.max_depth = 1;
    ts.tree.min_leaf = 3;
    auto m = train(ts, x, d, y);
    auto oracle = best_split_oracle(x, d, y, 3);
    const auto& root = m.trees[0].nodes[0];
    CHECK(root.feature == oracle.feature);
    if (oracle.feature >= 0) CHECK(root.threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
  }
}

TEST_CASE("forest prediction is the mean of its trees and importances sum to one") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 200, d = 4;
  std::vector<double> x(n * d);
  std::vector<int> y(n);
  for (auto& v : x) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i * d] + x[i * d + 1] > 1.0 ? 1 : 0;
  ModelSpec fs = spec_for(ModelKind::Forest, 5);
  fs.forest.n_trees = 10;
  auto m = train(fs, x, d, y);
  REQUIRE(m.trees.size() == 10);
  double mean = 0;
  for (const auto& t : m.trees) mean += t.predict({&x[0], d});
  mean /= m.trees.size();
  CHECK(m.predict_proba({&x[0], d}) == doctest::Approx(mean).epsilon(1e-12));
  double imp_total = 0;
  for (double v : m.importances) imp_total += v;
  CHECK(imp_total == doctest::Approx(1.0).epsilon(1e-9));
  // informative features should carry the bulk of the importance
  CHECK(m.importances[0] + m.importances[1] > m.importances[2] + m.importances[3]);
}

TEST_CASE("boosting reduces training loss monotonically and fits the signal") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 300, d = 3;
  std::vector<double> x(n * d);
  std::vector<int> y(n);
  for (auto& v : x) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i * d] > 0.5 ? 1 : 0;
  ModelSpec bs = spec_for(ModelKind::Boosting, 3);
  bs.boosting.n_stages = 30;
  auto m = train(bs, x, d, y);
  REQUIRE(m.loss_trace.size() == 31);
  for (std::size_t i = 1; i < m.loss_trace.size(); ++i)
    CHECK(m.loss_trace[i] <= m.loss_trace[i - 1] + 1e-9);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i)
    ok += (m.predict_proba({&x[i * d], d}) >= 0.5 ? 1 : 0) == y[i];
  CHECK(ok > 95 * n / 100);
}

TEST_CASE("zero-coefficient logistic model predicts sigmoid of the intercept") {
  FittedModel m;
  m.kind = ModelKind::Logistic;
  m.feature_names = {"a", "b"};
  m.coefficients = {0, 0};
  m.intercept = 0;
  std::vector<double> row = {3.0, -2.0};
  CHECK(m.predict_proba(row) == 0.5);
  m.intercept = 1.0;
  CHECK(m.predict_proba(row) == doctest::Approx(sigmoid(1.0)));
}

TEST_CASE("all four kinds survive a json round trip with identical predictions") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 120, d = 3;
  std::vector<double> x(n * d);
  std::vector<int> y(n);
  for (auto& v : x) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i * d] + u(rng) * 0.2 > 0.6 ? 1 : 0;
  bool has0 = false, has1 = false;
  for (int v : y) (v ? has1 : has0) = true;
  REQUIRE((has0 && has1));
  for (ModelKind k : {ModelKind::Logistic, ModelKind::Tree, ModelKind::Forest, ModelKind::Boosting}) {
    ModelSpec s = spec_for(k, 2);
    s.forest.n_trees = 5;
    s.boosting.n_stages = 5;
    auto m = train(s, x, d, y, {"u", "v", "w"});
    auto restored = model_from_json(model_to_json(m));
    CHECK(restored.kind == m.kind);
    CHECK(restored.feature_names == m.feature_names);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(restored.predict_proba({&x[i * d], d}) == m.predict_proba({&x[i * d], d}));
  }
}

TEST_CASE("feature weights rank by |coefficient| or importance") {
  FittedModel m;
  m.kind = ModelKind::Logistic;
  m.coefficients = {-2.0, 0.5};
  auto w = m.feature_weights();
  CHECK(w[0] == 2.0);
  CHECK(w[1] == 0.5);
}

TEST_CASE("training rejects degenerate inputs") {
  std::vector<double> x = {1, 2, 3, 4};
  CHECK_THROWS(train(spec_for(ModelKind::Logistic), x, 1, {1, 1, 1, 1}));  // single class
  std::vector<double> bad = {1, std::nan(""), 3, 4};
  CHECK_THROWS(train(spec_for(ModelKind::Logistic), bad, 1, {0, 1, 0, 1}));
  CHECK_THROWS(train(spec_for(ModelKind::Logistic), x, 1, {0, 1, 0, 1}, {"a", "b"}));  // catalog size
  ModelSpec s = spec_for(ModelKind::Boosting);
  s.boosting.learning_rate = 0;
  CHECK_THROWS(train(s, x, 1, {0, 1, 0, 1}));
}

TEST_CASE("same seed gives identical stochastic models, different seeds differ") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 150, d = 4;
  std::vector<double> x(n * d);
  std::vector<int> y(n);
  for (auto& v : x) v = u(rng);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i * d] > 0.5 ? 1 : 0;
  ModelSpec fs = spec_for(ModelKind::Forest, 7);
  fs.forest.n_trees = 8;
  auto a = train(fs, x, d, y);
  auto b = train(fs, x, d, y);
  CHECK(model_to_json(a) == model_to_json(b));
  fs.seed = 8;
  auto c = train(fs, x, d, y);
  CHECK(model_to_json(a) != model_to_json(c));
}
