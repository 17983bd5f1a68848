#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oudpipe/tree.hpp"

namespace oudpipe {

enum class ModelKind { Logistic, Tree, Forest, Boosting };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Tree: return "tree";
    case ModelKind::Forest: return "forest";
    case ModelKind::Boosting: return "boosting";
  }
  return "?";
}

inline ModelKind model_kind_from_name(const std::string& s) {
  if (s == "logistic") return ModelKind::Logistic;
  if (s == "tree") return ModelKind::Tree;
  if (s == "forest") return ModelKind::Forest;
  if (s == "boosting") return ModelKind::Boosting;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct LogisticParams {
  int max_iterations = 50;
  double tolerance = 1e-6;  // stop when the gradient norm falls below this
  double l2 = 0.0;          // unpenalized by default so odds ratios stay unbiased
};

struct TreeParams {
  int max_depth = 12;
  int min_leaf = 5;
};

struct ForestParams {
  int n_trees = 100;
  int max_depth = 12;
  int min_leaf = 5;
  int mtry = 0;  // 0 = floor(sqrt(n_features))
};

struct BoostingParams {
  int n_stages = 100;
  int max_depth = 3;
  int min_leaf = 5;
  double learning_rate = 0.1;
};

struct ModelSpec {
  ModelKind kind = ModelKind::Logistic;
  LogisticParams logistic;
  TreeParams tree;
  ForestParams forest;
  BoostingParams boosting;
  std::uint64_t seed = 0;

  void validate() const {
    if (logistic.max_iterations < 1 || logistic.tolerance <= 0 || logistic.l2 < 0)
      throw std::invalid_argument("bad logistic params");
    if (tree.max_depth < 1 || tree.min_leaf < 1) throw std::invalid_argument("bad tree params");
    if (forest.n_trees < 1 || forest.max_depth < 1 || forest.min_leaf < 1 || forest.mtry < 0)
      throw std::invalid_argument("bad forest params");
    if (boosting.n_stages < 1 || boosting.max_depth < 1 ||
        !(boosting.learning_rate > 0) || boosting.learning_rate > 1)
      throw std::invalid_argument("bad boosting params");
  }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Mean log-loss and its gradient for a linear model (bias last in grad output).
inline double logistic_loss_grad(const std::vector<double>& x, std::size_t n_cols,
                                 const std::vector<int>& y, const std::vector<double>& w,
                                 double bias, double l2, std::vector<double>* grad_out) {
  const std::size_t n = y.size();
  double loss = 0;
  if (grad_out) grad_out->assign(n_cols + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &x[i * n_cols];
    double z = bias;
    for (std::size_t c = 0; c < n_cols; ++c) z += w[c] * row[c];
    const double p = sigmoid(z);
    const double eps = 1e-15;
    loss += y[i] ? -std::log(std::max(p, eps)) : -std::log(std::max(1.0 - p, eps));
    if (grad_out) {
      const double r = p - y[i];
      for (std::size_t c = 0; c < n_cols; ++c) (*grad_out)[c] += r * row[c];
      (*grad_out)[n_cols] += r;
    }
  }
  loss /= n;
  if (grad_out)
    for (auto& g : *grad_out) g /= n;
  if (l2 > 0) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      loss += 0.5 * l2 * w[c] * w[c];
      if (grad_out) (*grad_out)[c] += l2 * w[c];
    }
  }
  return loss;
}

struct FittedModel {
  ModelKind kind = ModelKind::Logistic;
  std::vector<std::string> feature_names;  // catalog binding
  ModelSpec spec;

  // logistic
  std::vector<double> coefficients;
  double intercept = 0;

  // tree kinds
  std::vector<DecisionTree> trees;
  std::vector<double> importances;  // normalized to sum 1 (tree kinds)

  // boosting
  double base_score = 0;

  // training metadata
  int iterations = 0;
  std::vector<double> loss_trace;

  double predict_proba(std::span<const double> row) const {
    if (row.size() != feature_names.size())
      throw std::invalid_argument("row does not match the model's feature catalog");
    switch (kind) {
      case ModelKind::Logistic: {
        double z = intercept;
        for (std::size_t c = 0; c < row.size(); ++c) z += coefficients[c] * row[c];
        return sigmoid(z);
      }
      case ModelKind::Tree:
        return trees[0].predict(row);
      case ModelKind::Forest: {
        double s = 0;
        for (const auto& t : trees) s += t.predict(row);
        return s / trees.size();
      }
      case ModelKind::Boosting: {
        double z = base_score;
        for (const auto& t : trees) z += spec.boosting.learning_rate * t.predict(row);
        return sigmoid(z);
      }
    }
    return 0;
  }

  std::vector<double> predict_proba_many(const std::vector<double>& x, std::size_t n_cols) const {
    if (n_cols != feature_names.size()) throw std::invalid_argument("catalog mismatch");
    const std::size_t n = n_cols ? x.size() / n_cols : 0;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = predict_proba({&x[i * n_cols], n_cols});
    return out;
  }

  /// Ranking weights for RFE: |coefficient| for the linear model, normalized
  /// impurity decrease for tree kinds.
  std::vector<double> feature_weights() const {
    if (kind == ModelKind::Logistic) {
      std::vector<double> w(coefficients.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::abs(coefficients[i]);
      return w;
    }
    return importances;
  }
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Dense symmetric solve via Cholesky with diagonal jitter fallback.
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (int attempt = 0; attempt < 6; ++attempt) {
    std::vector<double> l = a;
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j) {
      double d = l[j * n + j];
      for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
      if (d <= 0) {
        ok = false;
        break;
      }
      l[j * n + j] = std::sqrt(d);
      for (std::size_t i = j + 1; i < n; ++i) {
        double s = l[i * n + j];
        for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
        l[i * n + j] = s / l[j * n + j];
      }
    }
    if (ok) {
      std::vector<double> y(n), x(n);
      for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
        y[i] = s / l[i * n + i];
      }
      for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * x[k];
        x[ii] = s / l[ii * n + ii];
      }
      return x;
    }
    const double jitter = std::pow(10.0, attempt - 8);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += jitter;
  }
  throw std::runtime_error("normal equations not positive definite");
}

inline void check_train_inputs(const std::vector<double>& x, std::size_t n_cols,
                               const std::vector<int>& y) {
  if (y.empty() || n_cols == 0 || x.size() != y.size() * n_cols)
    throw std::invalid_argument("empty or misshapen training data");
  bool has0 = false, has1 = false;
  for (int v : y) (v ? has1 : has0) = true;
  if (!has0 || !has1) throw std::invalid_argument("training data contains a single class");
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
}

inline FittedModel train_logistic(const ModelSpec& spec, const std::vector<double>& x,
                                  std::size_t n_cols, const std::vector<int>& y) {
  FittedModel m;
  m.kind = ModelKind::Logistic;
  m.spec = spec;
  const std::size_t n = y.size();
  std::vector<double> w(n_cols, 0.0);
  double bias = 0;
  const auto& p = spec.logistic;

  // Newton iterations on the mean log-loss; damped when a full step overshoots.
  std::vector<double> grad;
  double loss = logistic_loss_grad(x, n_cols, y, w, bias, p.l2, &grad);
  m.loss_trace.push_back(loss);
  const std::size_t d = n_cols + 1;
  std::vector<double> hess(d * d);
  std::vector<double> probs(n);
  for (int it = 0; it < p.max_iterations; ++it) {
    double gnorm = 0;
    for (double g : grad) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    if (gnorm < p.tolerance) break;
    ++m.iterations;

    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = &x[i * n_cols];
      double z = bias;
      for (std::size_t c = 0; c < n_cols; ++c) z += w[c] * row[c];
      const double pr = sigmoid(z);
      const double s = std::max(pr * (1.0 - pr), 1e-12);
      probs[i] = s;
      for (std::size_t a = 0; a < n_cols; ++a) {
        const double sa = s * row[a];
        for (std::size_t b = a; b < n_cols; ++b) hess[a * d + b] += sa * row[b];
        hess[a * d + n_cols] += sa;
      }
      hess[n_cols * d + n_cols] += s;
    }
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < a; ++b) hess[a * d + b] = hess[b * d + a];
    for (auto& h : hess) h /= n;
    for (std::size_t c = 0; c < n_cols; ++c) hess[c * d + c] += p.l2;

    auto step = solve_spd(hess, grad);
    double scale = 1.0;
    for (int halving = 0; halving < 30; ++halving) {
      std::vector<double> w2 = w;
      for (std::size_t c = 0; c < n_cols; ++c) w2[c] -= scale * step[c];
      const double bias2 = bias - scale * step[n_cols];
      std::vector<double> grad2;
      const double loss2 = logistic_loss_grad(x, n_cols, y, w2, bias2, p.l2, &grad2);
      if (loss2 <= loss + 1e-12) {
        w = std::move(w2);
        bias = bias2;
        loss = loss2;
        grad = std::move(grad2);
        break;
      }
      scale /= 2;
    }
    m.loss_trace.push_back(loss);
  }
  for (double c : w)
    if (!std::isfinite(c)) throw std::runtime_error("logistic training diverged");
  m.coefficients = std::move(w);
  m.intercept = bias;
  return m;
}

inline std::vector<double> normalize_importance(std::vector<double> imp) {
  double total = 0;
  for (double v : imp) total += v;
  if (total > 0)
    for (auto& v : imp) v /= total;
  return imp;
}

inline FittedModel train_tree(const ModelSpec& spec, const std::vector<double>& x,
                              std::size_t n_cols, const std::vector<int>& y) {
  FittedModel m;
  m.kind = ModelKind::Tree;
  m.spec = spec;
  auto binned = BinnedData::build(x, n_cols);
  TreeTrainer trainer(binned, {spec.tree.max_depth, spec.tree.min_leaf, 0});
  std::vector<std::uint32_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0u);
  std::vector<double> imp(n_cols, 0.0);
  std::mt19937_64 rng(spec.seed);
  m.trees.push_back(trainer.fit_classification(y, std::move(rows), rng, &imp));
  m.importances = normalize_importance(std::move(imp));
  return m;
}

inline FittedModel train_forest(const ModelSpec& spec, const std::vector<double>& x,
                                std::size_t n_cols, const std::vector<int>& y) {
  FittedModel m;
  m.kind = ModelKind::Forest;
  m.spec = spec;
  auto binned = BinnedData::build(x, n_cols);
  const int mtry = spec.forest.mtry > 0
                       ? spec.forest.mtry
                       : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(n_cols))));
  TreeTrainer trainer(binned, {spec.forest.max_depth, spec.forest.min_leaf, mtry});
  const std::size_t n = y.size();
  std::vector<double> imp(n_cols, 0.0);
  for (int t = 0; t < spec.forest.n_trees; ++t) {
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(t)));
    std::vector<std::uint32_t> rows(n);
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
    for (auto& r : rows) r = pick(rng);  // bootstrap
    m.trees.push_back(trainer.fit_classification(y, std::move(rows), rng, &imp));
  }
  m.importances = normalize_importance(std::move(imp));
  return m;
}

inline FittedModel train_boosting(const ModelSpec& spec, const std::vector<double>& x,
                                  std::size_t n_cols, const std::vector<int>& y) {
  FittedModel m;
  m.kind = ModelKind::Boosting;
  m.spec = spec;
  auto binned = BinnedData::build(x, n_cols);
  TreeTrainer trainer(binned, {spec.boosting.max_depth, spec.boosting.min_leaf, 0});
  const std::size_t n = y.size();
  double pos = 0;
  for (int v : y) pos += v;
  const double p0 = std::clamp(pos / n, 1e-9, 1.0 - 1e-9);
  m.base_score = std::log(p0 / (1.0 - p0));

  std::vector<double> z(n, m.base_score), grad(n), hess(n);
  std::vector<double> imp(n_cols, 0.0);
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  for (int stage = 0; stage < spec.boosting.n_stages; ++stage) {
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(z[i]);
      loss += y[i] ? -std::log(std::max(p, 1e-15)) : -std::log(std::max(1.0 - p, 1e-15));
      grad[i] = y[i] - p;  // negative gradient of log-loss
      hess[i] = std::max(p * (1.0 - p), 1e-12);
    }
    m.loss_trace.push_back(loss / n);
    std::mt19937_64 rng(mix_seed(spec.seed, 0x60057u + stage));
    auto tree = trainer.fit_regression(grad, hess, all, rng, &imp);
    for (std::size_t i = 0; i < n; ++i)
      z[i] += spec.boosting.learning_rate * tree.predict({&x[i * n_cols], n_cols});
    m.trees.push_back(std::move(tree));
  }
  double final_loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(z[i]);
    final_loss += y[i] ? -std::log(std::max(p, 1e-15)) : -std::log(std::max(1.0 - p, 1e-15));
  }
  m.loss_trace.push_back(final_loss / n);
  m.importances = normalize_importance(std::move(imp));
  return m;
}

}  // namespace detail

inline FittedModel train(const ModelSpec& spec, const std::vector<double>& x, std::size_t n_cols,
                         const std::vector<int>& y,
                         const std::vector<std::string>& feature_names = {}) {
  spec.validate();
  detail::check_train_inputs(x, n_cols, y);
  FittedModel m;
  switch (spec.kind) {
    case ModelKind::Logistic: m = detail::train_logistic(spec, x, n_cols, y); break;
    case ModelKind::Tree: m = detail::train_tree(spec, x, n_cols, y); break;
    case ModelKind::Forest: m = detail::train_forest(spec, x, n_cols, y); break;
    case ModelKind::Boosting: m = detail::train_boosting(spec, x, n_cols, y); break;
  }
  if (!feature_names.empty()) {
    if (feature_names.size() != n_cols) throw std::invalid_argument("catalog size mismatch");
    m.feature_names = feature_names;
  } else {
    m.feature_names.resize(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) m.feature_names[c] = "f" + std::to_string(c);
  }
  return m;
}

/// exp(coefficient) per feature of an unpenalized logistic fit. Count features are
/// per-unit-increase odds ratios; indicator features are relative to their
/// reference group (female / age 65+ / non-chronic).
inline std::map<std::string, double> odds_ratios(const FittedModel& model) {
  if (model.kind != ModelKind::Logistic)
    throw std::invalid_argument("odds ratios require a logistic model");
  std::map<std::string, double> out;
  for (std::size_t c = 0; c < model.coefficients.size(); ++c)
    out[model.feature_names[c]] = std::exp(model.coefficients[c]);
  return out;
}

// --- serialization (versioned JSON document) ---

inline nlohmann::json tree_to_json(const DecisionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes)
    nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}, {"v", n.value}});
  return nodes;
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  DecisionTree t;
  for (const auto& n : j)
    t.nodes.push_back({n.at("f"), n.at("t"), n.at("l"), n.at("r"), n.at("v")});
  return t;
}

inline nlohmann::json model_to_json(const FittedModel& m) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = model_kind_name(m.kind);
  j["feature_names"] = m.feature_names;
  j["seed"] = m.spec.seed;
  switch (m.kind) {
    case ModelKind::Logistic:
      j["params"] = {{"max_iterations", m.spec.logistic.max_iterations},
                     {"tolerance", m.spec.logistic.tolerance},
                     {"l2", m.spec.logistic.l2}};
      j["intercept"] = m.intercept;
      j["coefficients"] = m.coefficients;
      break;
    case ModelKind::Tree:
      j["params"] = {{"max_depth", m.spec.tree.max_depth}, {"min_leaf", m.spec.tree.min_leaf}};
      break;
    case ModelKind::Forest:
      j["params"] = {{"n_trees", m.spec.forest.n_trees},
                     {"max_depth", m.spec.forest.max_depth},
                     {"min_leaf", m.spec.forest.min_leaf},
                     {"mtry", m.spec.forest.mtry}};
      break;
    case ModelKind::Boosting:
      j["params"] = {{"n_stages", m.spec.boosting.n_stages},
                     {"max_depth", m.spec.boosting.max_depth},
                     {"min_leaf", m.spec.boosting.min_leaf},
                     {"learning_rate", m.spec.boosting.learning_rate}};
      j["base_score"] = m.base_score;
      break;
  }
  if (m.kind != ModelKind::Logistic) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : m.trees) trees.push_back(tree_to_json(t));
    j["trees"] = trees;
    j["importances"] = m.importances;
  }
  j["iterations"] = m.iterations;
  j["loss_trace"] = m.loss_trace;
  return j;
}

inline FittedModel model_from_json(const nlohmann::json& j) {
  if (j.at("format_version") != 1) throw std::runtime_error("unsupported model format version");
  FittedModel m;
  m.kind = model_kind_from_name(j.at("kind"));
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.spec.kind = m.kind;
  m.spec.seed = j.at("seed");
  const auto& p = j.at("params");
  switch (m.kind) {
    case ModelKind::Logistic:
      m.spec.logistic = {p.at("max_iterations"), p.at("tolerance"), p.at("l2")};
      m.intercept = j.at("intercept");
      m.coefficients = j.at("coefficients").get<std::vector<double>>();
      break;
    case ModelKind::Tree:
      m.spec.tree = {p.at("max_depth"), p.at("min_leaf")};
      break;
    case ModelKind::Forest:
      m.spec.forest = {p.at("n_trees"), p.at("max_depth"), p.at("min_leaf"), p.at("mtry")};
      break;
    case ModelKind::Boosting:
      m.spec.boosting = {p.at("n_stages"), p.at("max_depth"), p.at("min_leaf"), p.at("learning_rate")};
      m.base_score = j.at("base_score");
      break;
  }
  if (m.kind != ModelKind::Logistic) {
    for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
    m.importances = j.at("importances").get<std::vector<double>>();
  }
  m.iterations = j.at("iterations");
  m.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  return m;
}

}  // namespace oudpipe
