#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "oudpipe/claims.hpp"
#include "oudpipe/cohort.hpp"
#include "oudpipe/featurize.hpp"
#include "oudpipe/matrix.hpp"
#include "oudpipe/metrics.hpp"
#include "oudpipe/models.hpp"
#include "oudpipe/select.hpp"
#include "oudpipe/smote.hpp"
#include "oudpipe/synth.hpp"

namespace oudpipe {

/// Bad input, missing artifact, invalid config: exit code 1.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SplitConfig {
  double test_fraction = 0.30;
  std::optional<std::uint64_t> seed;
};

struct PipelineConfig {
  std::string output_dir;
  std::optional<GeneratorConfig> generator;
  std::optional<ClaimsPaths> inputs;
  std::string opioid_ndc_file;
  StudyWindows windows;
  CohortOptions cohort;
  FeaturizeOptions featurize;
  double variance_threshold = 0.03;
  double chi2_alpha = 0.05;
  double rfe_prune_fraction = 0.10;
  int rfe_folds = 5;
  SmoteConfig smote;
  bool smote_seed_set = false;
  std::vector<ModelSpec> models;
  std::vector<bool> model_seed_set;
  SplitConfig split;
  double threshold = 0.5;
  std::uint64_t seed = 42;
  bool generator_seed_set = false;

  nlohmann::json raw;  // resolved document, hashed for provenance

  std::uint64_t config_hash() const {
    const std::string dump = raw.dump();
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : dump) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  std::uint64_t derived_seed(std::uint64_t salt) const { return detail::mix_seed(seed, salt); }
};

namespace cfgdetail {

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

inline Date require_date(const nlohmann::json& j, const std::string& path) {
  auto d = parse_date(j.get<std::string>());
  if (!d) throw UserError("invalid date at " + path);
  return *d;
}

inline ModelSpec parse_model_spec(const nlohmann::json& j, const std::string& path, bool& seed_set) {
  ModelSpec s;
  if (!j.contains("kind")) throw UserError("missing field " + path + ".kind");
  s.kind = model_kind_from_name(j.at("kind").get<std::string>());
  seed_set = j.contains("seed");
  if (seed_set) s.seed = j.at("seed").get<std::uint64_t>();
  switch (s.kind) {
    case ModelKind::Logistic:
      s.logistic.max_iterations = get_or(j, "max_iterations", s.logistic.max_iterations);
      s.logistic.tolerance = get_or(j, "tolerance", s.logistic.tolerance);
      s.logistic.l2 = get_or(j, "l2", s.logistic.l2);
      break;
    case ModelKind::Tree:
      s.tree.max_depth = get_or(j, "max_depth", s.tree.max_depth);
      s.tree.min_leaf = get_or(j, "min_leaf", s.tree.min_leaf);
      break;
    case ModelKind::Forest:
      s.forest.n_trees = get_or(j, "n_trees", s.forest.n_trees);
      s.forest.max_depth = get_or(j, "max_depth", s.forest.max_depth);
      s.forest.min_leaf = get_or(j, "min_leaf", s.forest.min_leaf);
      s.forest.mtry = get_or(j, "mtry", s.forest.mtry);
      break;
    case ModelKind::Boosting:
      s.boosting.n_stages = get_or(j, "n_stages", s.boosting.n_stages);
      s.boosting.max_depth = get_or(j, "max_depth", s.boosting.max_depth);
      s.boosting.min_leaf = get_or(j, "min_leaf", s.boosting.min_leaf);
      s.boosting.learning_rate = get_or(j, "learning_rate", s.boosting.learning_rate);
      break;
  }
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw UserError(path + ": " + e.what());
  }
  return s;
}

inline GeneratorConfig parse_generator(const nlohmann::json& j, bool& seed_set) {
  GeneratorConfig g;
  if (!j.contains("n_patients")) throw UserError("missing field generator.n_patients");
  g.n_patients = j.at("n_patients").get<std::size_t>();
  seed_set = j.contains("seed");
  if (seed_set) g.seed = j.at("seed").get<std::uint64_t>();
  g.target_oud_prevalence = get_or(j, "target_oud_prevalence", g.target_oud_prevalence);
  g.male_fraction = get_or(j, "male_fraction", g.male_fraction);
  if (j.contains("age_fractions")) {
    auto v = j.at("age_fractions").get<std::vector<double>>();
    if (v.size() != 6) throw UserError("generator.age_fractions must have 6 entries");
    std::copy(v.begin(), v.end(), g.age_fractions.begin());
  }
  if (j.contains("chronicity_fractions")) {
    auto v = j.at("chronicity_fractions").get<std::vector<double>>();
    if (v.size() != 4) throw UserError("generator.chronicity_fractions must have 4 entries");
    std::copy(v.begin(), v.end(), g.chronicity_fractions.begin());
  }
  for (const auto& d : j.value("dx_features", nlohmann::json::array())) {
    GeneratorConfig::DxFeature f;
    f.code = d.at("code").get<std::string>();
    if (auto norm = normalize_icd9(f.code)) f.code = *norm;
    f.prevalence = get_or(d, "prevalence", f.prevalence);
    f.extra_count_mean = get_or(d, "extra_count_mean", f.extra_count_mean);
    g.dx_features.push_back(f);
  }
  for (const auto& e : j.value("planted_effects", nlohmann::json::array()))
    g.planted_effects.push_back({e.at("feature").get<std::string>(), e.at("log_odds").get<double>()});
  for (const auto& e : j.value("interaction_effects", nlohmann::json::array()))
    g.interaction_effects.push_back({e.at("feature_a").get<std::string>(),
                                     e.at("feature_b").get<std::string>(),
                                     e.at("log_odds").get<double>()});
  if (j.contains("study_start")) g.study_start = require_date(j.at("study_start"), "generator.study_start");
  if (j.contains("study_end")) g.study_end = require_date(j.at("study_end"), "generator.study_end");
  return g;
}

}  // namespace cfgdetail

inline PipelineConfig parse_config(const nlohmann::json& j) {
  PipelineConfig c;
  c.raw = j;
  if (!j.contains("output_dir")) throw UserError("missing field output_dir");
  c.output_dir = j.at("output_dir").get<std::string>();
  c.seed = cfgdetail::get_or<std::uint64_t>(j, "seed", c.seed);

  if (j.contains("generator")) {
    c.generator = cfgdetail::parse_generator(j.at("generator"), c.generator_seed_set);
  } else if (j.contains("inputs")) {
    const auto& in = j.at("inputs");
    for (const char* k : {"pharmacy", "medical", "eligibility"})
      if (!in.contains(k)) throw UserError(std::string("missing field inputs.") + k);
    c.inputs = ClaimsPaths{in.at("pharmacy"), in.at("medical"), in.at("eligibility")};
  } else {
    throw UserError("config needs either generator or inputs");
  }
  c.opioid_ndc_file = cfgdetail::get_or<std::string>(j, "opioid_ndc_file", "");

  if (j.contains("windows")) {
    const auto& w = j.at("windows");
    c.windows.lookback_days = cfgdetail::get_or(w, "lookback_days", c.windows.lookback_days);
    c.windows.usage_window_days = cfgdetail::get_or(w, "usage_window_days", c.windows.usage_window_days);
    c.windows.follow_up_start_days =
        cfgdetail::get_or(w, "follow_up_start_days", c.windows.follow_up_start_days);
    c.windows.follow_up_end_days =
        cfgdetail::get_or(w, "follow_up_end_days", c.windows.follow_up_end_days);
    try {
      c.windows.validate();
    } catch (const std::exception& e) {
      throw UserError(std::string("windows: ") + e.what());
    }
  }
  if (j.contains("cohort")) {
    const auto& co = j.at("cohort");
    const std::string mode = cfgdetail::get_or<std::string>(co, "index_mode", "first_clean");
    if (mode == "first_clean")
      c.cohort.index_mode = IndexMode::FirstClean;
    else if (mode == "most_recent")
      c.cohort.index_mode = IndexMode::MostRecent;
    else
      throw UserError("cohort.index_mode must be first_clean or most_recent");
    c.cohort.exclude_usage_window_outcomes =
        cfgdetail::get_or(co, "exclude_usage_window_outcomes", true);
    if (co.contains("study_end"))
      c.cohort.study_end = cfgdetail::require_date(co.at("study_end"), "cohort.study_end");
  }
  if (c.generator && !c.cohort.study_end) c.cohort.study_end = c.generator->study_end;

  if (j.contains("featurize")) {
    const auto& f = j.at("featurize");
    c.featurize.ablate_dependency_history = cfgdetail::get_or(f, "ablate_dependency_history", false);
    if (f.contains("ablation_prefix_file"))
      c.featurize.ablation_prefixes = load_ablation_prefixes(f.at("ablation_prefix_file"));
  }
  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    c.variance_threshold = cfgdetail::get_or(s, "variance_threshold", c.variance_threshold);
    c.chi2_alpha = cfgdetail::get_or(s, "chi2_alpha", c.chi2_alpha);
    c.rfe_prune_fraction = cfgdetail::get_or(s, "rfe_prune_fraction", c.rfe_prune_fraction);
    c.rfe_folds = cfgdetail::get_or(s, "rfe_folds", c.rfe_folds);
    if (c.variance_threshold < 0) throw UserError("selection.variance_threshold must be >= 0");
    if (!(c.chi2_alpha > 0 && c.chi2_alpha <= 1)) throw UserError("selection.chi2_alpha must be in (0,1]");
    if (!(c.rfe_prune_fraction > 0 && c.rfe_prune_fraction < 1))
      throw UserError("selection.rfe_prune_fraction must be in (0,1)");
    if (c.rfe_folds < 2) throw UserError("selection.rfe_folds must be >= 2");
  }
  if (j.contains("smote")) {
    const auto& s = j.at("smote");
    c.smote.k_neighbors = cfgdetail::get_or(s, "k_neighbors", c.smote.k_neighbors);
    c.smote.target_ratio = cfgdetail::get_or(s, "target_ratio", c.smote.target_ratio);
    c.smote_seed_set = s.contains("seed");
    if (c.smote_seed_set) c.smote.seed = s.at("seed").get<std::uint64_t>();
    try {
      c.smote.validate();
    } catch (const std::exception& e) {
      throw UserError(std::string("smote: ") + e.what());
    }
  }
  if (j.contains("models")) {
    for (std::size_t i = 0; i < j.at("models").size(); ++i) {
      bool seed_set = false;
      c.models.push_back(cfgdetail::parse_model_spec(j.at("models")[i],
                                                     "models[" + std::to_string(i) + "]", seed_set));
      c.model_seed_set.push_back(seed_set);
    }
  } else {
    for (ModelKind k : {ModelKind::Logistic, ModelKind::Tree, ModelKind::Forest, ModelKind::Boosting}) {
      ModelSpec s;
      s.kind = k;
      c.models.push_back(s);
      c.model_seed_set.push_back(false);
    }
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.test_fraction = cfgdetail::get_or(s, "test_fraction", c.split.test_fraction);
    if (s.contains("seed")) c.split.seed = s.at("seed").get<std::uint64_t>();
    if (!(c.split.test_fraction > 0 && c.split.test_fraction < 1))
      throw UserError("split.test_fraction must be in (0,1)");
  }
  c.threshold = cfgdetail::get_or(j, "threshold", c.threshold);

  // Derive unset sub-seeds from the top-level seed.
  if (c.generator && !c.generator_seed_set) c.generator->seed = c.derived_seed(1);
  if (!c.split.seed) c.split.seed = c.derived_seed(2);
  if (!c.smote_seed_set) c.smote.seed = c.derived_seed(3);
  for (std::size_t i = 0; i < c.models.size(); ++i)
    if (!c.model_seed_set[i]) c.models[i].seed = c.derived_seed(10 + i);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UserError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

// ---------- stage plumbing ----------

namespace stagedetail {

namespace fs = std::filesystem;

inline std::string art(const PipelineConfig& c, const std::string& name) {
  return (fs::path(c.output_dir) / name).string();
}

inline void require_artifact(const PipelineConfig& c, const std::string& name,
                             const std::string& producing_command) {
  if (!fs::exists(art(c, name)))
    throw UserError("missing artifact " + name + ": run " + producing_command + " first");
}

inline void write_manifest(const PipelineConfig& c, const std::string& stage,
                           const std::vector<std::string>& artifacts) {
  nlohmann::json j;
  j["stage"] = stage;
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(c.config_hash()));
  j["config_hash"] = hex;
  j["artifacts"] = artifacts;
  auto out = open_output(art(c, "manifest_" + stage + ".json"));
  out << j.dump(2) << "\n";
}

inline OpioidTable load_opioid_table(const PipelineConfig& c) {
  if (c.opioid_ndc_file.empty()) {
    if (c.generator) return OpioidTable(c.generator->opioid_ndcs);
    throw UserError("opioid_ndc_file is required when reading external claims");
  }
  return OpioidTable::load(c.opioid_ndc_file);
}

inline ClaimsPaths claim_paths(const PipelineConfig& c) {
  if (c.inputs) return *c.inputs;
  return {art(c, "pharmacy.csv"), art(c, "medical.csv"), art(c, "eligibility.csv")};
}

}  // namespace stagedetail

inline void stage_synth(PipelineConfig& c) {
  namespace sd = stagedetail;
  if (!c.generator) throw UserError("config has no generator section; synth is not applicable");
  std::filesystem::create_directories(c.output_dir);
  if (!c.opioid_ndc_file.empty()) {
    auto table = OpioidTable::load(c.opioid_ndc_file);
    c.generator->opioid_ndcs.assign(table.codes().begin(), table.codes().end());
    std::sort(c.generator->opioid_ndcs.begin(), c.generator->opioid_ndcs.end());
  }
  c.generator->windows = c.windows;
  auto result = generate(*c.generator);
  {
    auto out = open_output(sd::art(c, "pharmacy.csv"));
    write_pharmacy(result.pharmacy, out);
  }
  {
    auto out = open_output(sd::art(c, "medical.csv"));
    write_medical(result.medical, out);
  }
  {
    auto out = open_output(sd::art(c, "eligibility.csv"));
    write_eligibility(result.eligibility, out);
  }
  {
    auto out = open_output(sd::art(c, "ground_truth.csv"));
    write_ground_truth(result.truth, out);
  }
  {
    auto out = open_output(sd::art(c, "planted_model.json"));
    out << result.truth.planted_model.dump(2) << "\n";
  }
  sd::write_manifest(c, "synth", {"pharmacy.csv", "medical.csv", "eligibility.csv",
                                  "ground_truth.csv", "planted_model.json"});
}

inline void stage_cohort(PipelineConfig& c) {
  namespace sd = stagedetail;
  std::filesystem::create_directories(c.output_dir);
  if (!c.inputs) sd::require_artifact(c, "pharmacy.csv", "synth");
  auto table = sd::load_opioid_table(c);
  auto bundle = parse_claims(sd::claim_paths(c), table);
  write_rejects(bundle.rejects, sd::art(c, "rejects.csv"));
  auto cohort = build_cohort(bundle, c.windows, OutcomeCodeSet{}, c.cohort);
  {
    auto out = open_output(sd::art(c, "cohort.csv"));
    write_cohort(cohort.members, out);
  }
  {
    nlohmann::json j;
    j["row_counts"] = {{"pharmacy", bundle.pharmacy_rows},
                       {"medical", bundle.medical_rows},
                       {"eligibility", bundle.eligibility_rows},
                       {"rejected", bundle.rejects.size()}};
    nlohmann::json reasons = nlohmann::json::object();
    for (const auto& [r, n] : cohort.exclusions.reasons) reasons[r] = n;
    j["exclusions"] = reasons;
    j["cohort_size"] = cohort.members.size();
    auto out = open_output(sd::art(c, "exclusions.json"));
    out << j.dump(2) << "\n";
  }
  sd::write_manifest(c, "cohort", {"rejects.csv", "cohort.csv", "exclusions.json"});
}

namespace stagedetail {

inline std::vector<CohortMember> load_cohort_csv(const std::string& path) {
  auto in = open_input(path);
  std::vector<CohortMember> members;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4) throw std::runtime_error("bad cohort.csv line " + std::to_string(lineno));
    CohortMember m;
    m.patient = f[0];
    m.index_date = *parse_date(f[1]);
    m.label = f[2] == "OUD" ? Label::OUD : Label::NOUD;
    if (!f[3].empty()) m.censor_date = parse_date(f[3]);
    members.push_back(m);
  }
  return members;
}

inline FeatureMatrix load_matrix(const PipelineConfig& c) {
  require_artifact(c, "features.csv", "featurize");
  require_artifact(c, "labels.csv", "featurize");
  require_artifact(c, "catalog.json", "featurize");
  FeatureMatrix m;
  {
    std::ifstream in(art(c, "catalog.json"));
    nlohmann::json j;
    in >> j;
    for (const auto& e : j.at("features")) {
      m.feature_names.push_back(e.at("name"));
      const std::string kind = e.at("kind");
      m.kinds.push_back(kind == "demographic" ? FeatureKind::Demographic
                        : kind == "chronicity" ? FeatureKind::Chronicity
                                               : FeatureKind::DxCount);
    }
  }
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < m.feature_names.size(); ++i) col_of[m.feature_names[i]] = i;
  std::unordered_map<std::string, std::size_t> row_of;
  {
    auto in = open_input(art(c, "labels.csv"));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 || line.empty()) continue;
      auto f = split_csv_line(line);
      row_of[f[0]] = m.row_ids.size();
      m.row_ids.push_back(f[0]);
      m.labels.push_back(f[1] == "0" ? Label::OUD : Label::NOUD);
    }
  }
  m.values.assign(m.rows() * m.cols(), 0.0);
  {
    auto in = open_input(art(c, "features.csv"));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 || line.empty()) continue;
      auto f = split_csv_line(line);
      m.at(row_of.at(f[0]), col_of.at(f[1])) = std::stod(f[2]);
    }
  }
  return m;
}

struct SplitIds {
  std::set<PatientId> train, test;
};

inline SplitIds load_split(const PipelineConfig& c) {
  require_artifact(c, "split.json", "featurize");
  std::ifstream in(art(c, "split.json"));
  nlohmann::json j;
  in >> j;
  SplitIds s;
  for (const auto& id : j.at("train")) s.train.insert(id.get<std::string>());
  for (const auto& id : j.at("test")) s.test.insert(id.get<std::string>());
  return s;
}

inline std::vector<std::size_t> rows_for(const FeatureMatrix& m, const std::set<PatientId>& ids) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.rows(); ++r)
    if (ids.count(m.row_ids[r])) rows.push_back(r);
  return rows;
}

}  // namespace stagedetail

inline void stage_featurize(PipelineConfig& c) {
  namespace sd = stagedetail;
  sd::require_artifact(c, "cohort.csv", "cohort");
  auto members = sd::load_cohort_csv(sd::art(c, "cohort.csv"));
  if (members.empty()) throw UserError("cohort is empty; nothing to featurize");
  auto table = sd::load_opioid_table(c);
  auto bundle = parse_claims(sd::claim_paths(c), table);

  // Stratified split decided up front so age imputation sees training rows only.
  std::vector<int> y(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) y[i] = members[i].label == Label::OUD ? 1 : 0;
  auto split = split_indices(y, c.split.test_fraction, *c.split.seed);
  FeaturizeOptions opts = c.featurize;
  for (auto r : split.train) opts.imputation_ids.insert(members[r].patient);

  auto matrix = build_matrix(members, bundle, c.windows, opts);
  {
    auto out = open_output(sd::art(c, "features.csv"));
    write_features_csv(matrix, out);
  }
  {
    auto out = open_output(sd::art(c, "labels.csv"));
    write_labels_csv(matrix, out);
  }
  {
    nlohmann::json j;
    nlohmann::json feats = nlohmann::json::array();
    for (std::size_t i = 0; i < matrix.cols(); ++i)
      feats.push_back({{"name", matrix.feature_names[i]},
                       {"kind", feature_kind_name(matrix.kinds[i])}});
    j["features"] = feats;
    auto out = open_output(sd::art(c, "catalog.json"));
    out << j.dump(2) << "\n";
  }
  {
    nlohmann::json j;
    nlohmann::json train = nlohmann::json::array(), test = nlohmann::json::array();
    for (auto r : split.train) train.push_back(members[r].patient);
    for (auto r : split.test) test.push_back(members[r].patient);
    j["train"] = train;
    j["test"] = test;
    j["test_fraction"] = c.split.test_fraction;
    auto out = open_output(sd::art(c, "split.json"));
    out << j.dump(2) << "\n";
  }
  sd::write_manifest(c, "featurize", {"features.csv", "labels.csv", "catalog.json", "split.json"});
}

inline void stage_select(PipelineConfig& c) {
  namespace sd = stagedetail;
  auto matrix = sd::load_matrix(c);
  auto split = sd::load_split(c);
  auto train_matrix = matrix.select_rows(sd::rows_for(matrix, split.train));
  auto y = train_matrix.y();

  SelectionReport report;
  report.input_features = train_matrix.feature_names;
  auto vt = variance_filter(train_matrix, c.variance_threshold);
  report.variances = vt.variances;
  auto vt_matrix = train_matrix.select_columns(vt.kept);
  report.variance_kept = vt_matrix.feature_names;

  auto chi2 = chi2_filter(vt_matrix, y, c.chi2_alpha);
  report.chi2_statistics = chi2.statistics;
  report.chi2_p_values = chi2.p_values;
  auto chi2_matrix = vt_matrix.select_columns(chi2.kept);
  report.chi2_kept = chi2_matrix.feature_names;
  if (chi2_matrix.cols() == 0) throw UserError("no features survive the chi2 filter");

  std::map<std::string, double> chi2_p_of;
  for (std::size_t i = 0; i < chi2.kept.size(); ++i)
    chi2_p_of[vt_matrix.feature_names[chi2.kept[i]]] = chi2.p_values[chi2.kept[i]];

  std::vector<std::string> artifacts = {"selection_report.json"};
  for (const auto& spec : c.models) {
    RfeConfig rc;
    rc.prune_fraction = c.rfe_prune_fraction;
    rc.folds = c.rfe_folds;
    rc.seed = c.derived_seed(0x4fe);
    rc.smote = c.smote;
    auto result = rfe(spec, chi2_matrix, rc);
    const std::string name = model_kind_name(spec.kind);
    double p_sum = 0;
    for (const auto& f : result.best().features) p_sum += chi2_p_of.at(f);
    report.mean_p_value_per_model[name] = p_sum / result.best().features.size();
    {
      auto out = open_output(sd::art(c, "retained_features_" + name + ".txt"));
      for (const auto& f : result.best().features) out << f << "\n";
    }
    artifacts.push_back("retained_features_" + name + ".txt");
    report.per_model[name] = std::move(result);
  }
  {
    auto out = open_output(sd::art(c, "selection_report.json"));
    out << report.to_json().dump(2) << "\n";
  }
  sd::write_manifest(c, "select", artifacts);
}

namespace stagedetail {

inline std::vector<std::string> load_lines(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline std::vector<std::size_t> columns_for(const FeatureMatrix& m,
                                            const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(m.column_index(n));
  return cols;
}

}  // namespace stagedetail

inline void stage_train(PipelineConfig& c) {
  namespace sd = stagedetail;
  sd::require_artifact(c, "selection_report.json", "select");
  auto matrix = sd::load_matrix(c);
  auto split = sd::load_split(c);
  auto train_matrix = matrix.select_rows(sd::rows_for(matrix, split.train));

  nlohmann::json report;
  {
    std::ifstream in(sd::art(c, "selection_report.json"));
    in >> report;
  }
  const auto chi2_kept = report.at("chi2_stage").at("kept").get<std::vector<std::string>>();

  std::vector<std::string> artifacts;
  for (const auto& spec : c.models) {
    const std::string name = model_kind_name(spec.kind);
    sd::require_artifact(c, "retained_features_" + name + ".txt", "select");
    const auto rfe_features = sd::load_lines(sd::art(c, "retained_features_" + name + ".txt"));
    for (const auto& [stage, features] :
         std::vector<std::pair<std::string, std::vector<std::string>>>{{"chi2", chi2_kept},
                                                                       {"rfe", rfe_features}}) {
      auto sub = train_matrix.select_columns(sd::columns_for(train_matrix, features));
      auto y = sub.y();
      SmoteConfig sc = c.smote;
      sc.seed = c.derived_seed(0x3a07e);
      auto balanced = smote(sub.values, sub.cols(), y, sc);
      auto model = train(spec, balanced.values, sub.cols(), balanced.y, sub.feature_names);
      const std::string file = "model_" + name + "_" + stage + ".json";
      auto out = open_output(sd::art(c, file));
      out << model_to_json(model).dump() << "\n";
      artifacts.push_back(file);
    }
  }
  sd::write_manifest(c, "train", artifacts);
}

inline void stage_evaluate(PipelineConfig& c) {
  namespace sd = stagedetail;
  auto matrix = sd::load_matrix(c);
  auto split = sd::load_split(c);
  auto train_matrix = matrix.select_rows(sd::rows_for(matrix, split.train));
  auto test_matrix = matrix.select_rows(sd::rows_for(matrix, split.test));

  std::vector<std::string> artifacts;
  for (const auto& spec : c.models) {
    const std::string name = model_kind_name(spec.kind);
    nlohmann::json per_model;
    for (const std::string stage : {"chi2", "rfe"}) {
      const std::string file = "model_" + name + "_" + stage + ".json";
      sd::require_artifact(c, file, "train");
      nlohmann::json mj;
      {
        std::ifstream in(sd::art(c, file));
        in >> mj;
      }
      auto model = model_from_json(mj);
      for (const auto& [split_name, part] :
           std::vector<std::pair<std::string, const FeatureMatrix*>>{{"train", &train_matrix},
                                                                     {"test", &test_matrix}}) {
        auto sub = part->select_columns(sd::columns_for(*part, model.feature_names));
        auto scores = model.predict_proba_many(sub.values, sub.cols());
        auto rep = evaluate_scores(sub.y(), scores, c.threshold);
        nlohmann::json e;
        e["auc"] = rep.auc;
        e["confusion"] = {{"tp", rep.prf.counts.tp}, {"fp", rep.prf.counts.fp},
                          {"fn", rep.prf.counts.fn}, {"tn", rep.prf.counts.tn}};
        e["oud"] = {{"precision", rep.prf.oud.precision}, {"recall", rep.prf.oud.recall},
                    {"f1", rep.prf.oud.f1}, {"zero_predicted", rep.prf.oud.zero_predicted}};
        e["noud"] = {{"precision", rep.prf.noud.precision}, {"recall", rep.prf.noud.recall},
                     {"f1", rep.prf.noud.f1}, {"zero_predicted", rep.prf.noud.zero_predicted}};
        per_model[stage][split_name] = e;
        if (split_name == "test") {
          const std::string roc_file = "roc_points_" + name + "_" + stage + ".csv";
          auto out = open_output(sd::art(c, roc_file));
          write_roc_csv(rep.roc, out);
          artifacts.push_back(roc_file);
        }
      }
    }
    const std::string mfile = "metrics_" + name + ".json";
    auto out = open_output(sd::art(c, mfile));
    out << per_model.dump(2) << "\n";
    artifacts.push_back(mfile);
  }
  sd::write_manifest(c, "evaluate", artifacts);
}

inline void stage_report(PipelineConfig& c) {
  namespace sd = stagedetail;
  std::vector<MetricsReport> reports;
  nlohmann::json summary;
  std::string best_model;
  double best_auc = -1;
  for (const auto& spec : c.models) {
    const std::string name = model_kind_name(spec.kind);
    sd::require_artifact(c, "metrics_" + name + ".json", "evaluate");
    nlohmann::json j;
    {
      std::ifstream in(sd::art(c, "metrics_" + name + ".json"));
      in >> j;
    }
    for (const std::string stage : {"chi2", "rfe"})
      for (const std::string split_name : {"train", "test"}) {
        const auto& e = j.at(stage).at(split_name);
        MetricsReport r;
        r.model = name;
        r.stage = stage;
        r.split = split_name;
        r.auc = e.at("auc");
        r.prf.oud = {e.at("oud").at("precision"), e.at("oud").at("recall"), e.at("oud").at("f1"),
                     e.at("oud").at("zero_predicted").get<bool>()};
        r.prf.noud = {e.at("noud").at("precision"), e.at("noud").at("recall"), e.at("noud").at("f1"),
                      e.at("noud").at("zero_predicted").get<bool>()};
        reports.push_back(r);
        if (stage == "rfe" && split_name == "test" && r.auc > best_auc) {
          best_auc = r.auc;
          best_model = name;
        }
      }
  }
  if (reports.size() < 2) throw UserError("need at least one evaluated model to report");
  {
    auto out = open_output(sd::art(c, "comparison.csv"));
    compare_models(reports, out);
  }
  summary["best_model_by_test_auc"] = best_model;
  summary["best_test_auc"] = best_auc;

  // Odds ratios from a dedicated unpenalized logistic fit on the raw (unbalanced)
  // training rows, so the coefficients stay interpretable.
  bool has_logistic = false;
  for (const auto& spec : c.models) has_logistic |= spec.kind == ModelKind::Logistic;
  std::vector<std::string> artifacts = {"comparison.csv", "summary.json"};
  if (has_logistic) {
    auto matrix = sd::load_matrix(c);
    auto split = sd::load_split(c);
    auto train_matrix = matrix.select_rows(sd::rows_for(matrix, split.train));
    const auto features = sd::load_lines(sd::art(c, "retained_features_logistic.txt"));
    auto sub = train_matrix.select_columns(sd::columns_for(train_matrix, features));
    ModelSpec lr;
    lr.kind = ModelKind::Logistic;
    lr.seed = c.derived_seed(0x0dd5);
    auto fit = train(lr, sub.values, sub.cols(), sub.y(), sub.feature_names);
    nlohmann::json ors;
    ors["reference_groups"] = {"female", "age_65_plus", "chronic_non"};
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [feature, orv] : odds_ratios(fit)) values[feature] = orv;
    ors["odds_ratios"] = values;
    ors["note"] = "count features: odds ratio per unit increase";
    auto out = open_output(sd::art(c, "odds_ratios.json"));
    out << ors.dump(2) << "\n";
    artifacts.push_back("odds_ratios.json");
  }
  {
    auto out = open_output(sd::art(c, "summary.json"));
    out << summary.dump(2) << "\n";
  }
  sd::write_manifest(c, "report", artifacts);
}

/// Dispatch; returns the process exit code contract (0 ok, 1 user error, 2 internal).
inline void run_command(const std::string& command, PipelineConfig& c) {
  if (command == "synth") stage_synth(c);
  else if (command == "cohort") stage_cohort(c);
  else if (command == "featurize") stage_featurize(c);
  else if (command == "select") stage_select(c);
  else if (command == "train") stage_train(c);
  else if (command == "evaluate") stage_evaluate(c);
  else if (command == "report") stage_report(c);
  else if (command == "run-all") {
    if (c.generator) stage_synth(c);
    stage_cohort(c);
    stage_featurize(c);
    stage_select(c);
    stage_train(c);
    stage_evaluate(c);
    stage_report(c);
  } else {
    throw UserError("unknown command: " + command);
  }
}

}  // namespace oudpipe
