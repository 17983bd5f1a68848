#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oudpipe/pipeline.hpp"

using namespace oudpipe;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("oudpipe_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small end-to-end configuration: enough signal and rows for every stage,
// small enough to run in seconds.
nlohmann::json smoke_config(const std::string& out_dir) {
  nlohmann::json j;
  j["output_dir"] = out_dir;
  j["seed"] = 11;
  j["generator"] = {
      {"n_patients", 400},
      {"target_oud_prevalence", 0.15},
      {"dx_features",
       {{{"code", "30000"}, {"prevalence", 0.25}},
        {{"code", "4011"}, {"prevalence", 0.30}},
        {{"code", "2724"}, {"prevalence", 0.20}}}},
      {"planted_effects",
       {{{"feature", "chronic_high"}, {"log_odds", 2.0}},
        {{"feature", "dx_30000"}, {"log_odds", 1.5}}}},
  };
  j["models"] = {{{"kind", "logistic"}},
                 {{"kind", "tree"}, {"max_depth", 6}},
                 {{"kind", "forest"}, {"n_trees", 10}, {"max_depth", 6}},
                 {{"kind", "boosting"}, {"n_stages", 10}}};
  return j;
}

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config errors name the offending field") {
  CHECK(what_of([] { parse_config(nlohmann::json::object()); }).find("output_dir") !=
        std::string::npos);
  CHECK(what_of([] { parse_config({{"output_dir", "x"}}); }).find("generator or inputs") !=
        std::string::npos);
  CHECK(what_of([] {
          parse_config({{"output_dir", "x"}, {"inputs", {{"pharmacy", "p"}, {"medical", "m"}}}});
        }).find("inputs.eligibility") != std::string::npos);
  CHECK(what_of([] {
          parse_config({{"output_dir", "x"}, {"generator", nlohmann::json::object()}});
        }).find("generator.n_patients") != std::string::npos);
  CHECK(what_of([] {
          parse_config({{"output_dir", "x"},
                        {"generator", {{"n_patients", 10}}},
                        {"models", {{{"kind", "svm"}}}}});
        }).find("svm") != std::string::npos);
  CHECK(what_of([] {
          parse_config({{"output_dir", "x"},
                        {"generator", {{"n_patients", 10}}},
                        {"selection", {{"chi2_alpha", 2.0}}}});
        }).find("chi2_alpha") != std::string::npos);
  CHECK(what_of([] {
          parse_config({{"output_dir", "x"},
                        {"generator", {{"n_patients", 10}, {"study_start", "not-a-date"}}}});
        }).find("study_start") != std::string::npos);
}

TEST_CASE("config errors are UserError so the cli exits 1") {
  CHECK_THROWS_AS(parse_config(nlohmann::json::object()), UserError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), UserError);
}

TEST_CASE("unset sub-seeds derive deterministically from the top-level seed") {
  nlohmann::json j = {{"output_dir", "x"}, {"generator", {{"n_patients", 10}}}, {"seed", 5}};
  auto a = parse_config(j);
  auto b = parse_config(j);
  CHECK(a.generator->seed == b.generator->seed);
  CHECK(*a.split.seed == *b.split.seed);
  CHECK(a.smote.seed == b.smote.seed);
  CHECK(a.models[0].seed == b.models[0].seed);
  CHECK(a.models[0].seed != a.models[1].seed);
  j["seed"] = 6;
  auto c = parse_config(j);
  CHECK(a.generator->seed != c.generator->seed);
  // explicit seeds win over derivation
  j["generator"]["seed"] = 123;
  CHECK(parse_config(j).generator->seed == 123);
}

TEST_CASE("missing models section defaults to all four classifiers") {
  auto c = parse_config({{"output_dir", "x"}, {"generator", {{"n_patients", 10}}}});
  REQUIRE(c.models.size() == 4);
  CHECK(c.models[0].kind == ModelKind::Logistic);
  CHECK(c.models[3].kind == ModelKind::Boosting);
}

TEST_CASE("config hash is stable for identical documents and differs otherwise") {
  nlohmann::json j = {{"output_dir", "x"}, {"generator", {{"n_patients", 10}}}};
  CHECK(parse_config(j).config_hash() == parse_config(j).config_hash());
  nlohmann::json k = j;
  k["seed"] = 1;
  CHECK(parse_config(j).config_hash() != parse_config(k).config_hash());
}

TEST_CASE("running a stage before its inputs exist names the missing command") {
  auto cfg = parse_config(smoke_config(fresh_dir("order")));
  const auto msg = what_of([&] { stage_featurize(cfg); });
  CHECK(msg.find("cohort") != std::string::npos);
  CHECK_THROWS_AS(stage_featurize(cfg), UserError);
  const auto msg2 = what_of([&] { stage_select(cfg); });
  CHECK(msg2.find("featurize") != std::string::npos);
}

TEST_CASE("full run-all produces every artifact and a four-model comparison") {
  const auto dir = fresh_dir("runall");
  auto cfg = parse_config(smoke_config(dir));
  run_command("run-all", cfg);

  for (const char* f :
       {"pharmacy.csv", "medical.csv", "eligibility.csv", "ground_truth.csv", "planted_model.json",
        "rejects.csv", "cohort.csv", "exclusions.json", "features.csv", "labels.csv", "catalog.json",
        "split.json", "selection_report.json", "retained_features_logistic.txt",
        "retained_features_forest.txt", "model_logistic_chi2.json", "model_logistic_rfe.json",
        "model_forest_rfe.json", "metrics_logistic.json", "metrics_forest.json",
        "roc_points_forest_rfe.csv", "comparison.csv", "summary.json", "odds_ratios.json",
        "manifest_synth.json", "manifest_report.json"})
    CHECK_MESSAGE(fs::exists(fs::path(dir) / f), f);

  // comparison: header + 4 models x 2 stages x 2 splits
  const auto comparison = slurp(dir + "/comparison.csv");
  CHECK(std::count(comparison.begin(), comparison.end(), '\n') == 17);
  for (const char* m : {"logistic", "tree", "forest", "boosting"})
    CHECK(comparison.find(m) != std::string::npos);

  nlohmann::json summary;
  std::ifstream(dir + "/summary.json") >> summary;
  CHECK(summary.contains("best_model_by_test_auc"));
  CHECK(summary.at("best_test_auc").get<double>() > 0.5);

  // the planted chronicity signal shows up in the recovered odds ratios
  nlohmann::json ors;
  std::ifstream(dir + "/odds_ratios.json") >> ors;
  if (ors.at("odds_ratios").contains("chronic_high"))
    CHECK(ors.at("odds_ratios").at("chronic_high").get<double>() > 1.5);

  // manifests carry the config hash
  nlohmann::json manifest;
  std::ifstream(dir + "/manifest_report.json") >> manifest;
  CHECK(manifest.at("stage") == "report");
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);

  // re-running the cohort stage is idempotent
  const auto cohort_before = slurp(dir + "/cohort.csv");
  run_command("cohort", cfg);
  CHECK(slurp(dir + "/cohort.csv") == cohort_before);
}

TEST_CASE("ablation flag removes dependency-history columns from the catalog") {
  auto make_catalog = [](bool ablate, const std::string& tag) {
    const auto dir = fresh_dir("ablate_" + tag);
    auto j = smoke_config(dir);
    j["generator"]["dx_features"].push_back({{"code", "3049"}, {"prevalence", 0.3}});
    j["featurize"] = {{"ablate_dependency_history", ablate}};
    auto cfg = parse_config(j);
    run_command("synth", cfg);
    run_command("cohort", cfg);
    run_command("featurize", cfg);
    nlohmann::json catalog;
    std::ifstream(dir + "/catalog.json") >> catalog;
    std::vector<std::string> names;
    for (const auto& f : catalog.at("features")) names.push_back(f.at("name"));
    return names;
  };
  auto with = make_catalog(false, "off");
  auto without = make_catalog(true, "on");
  CHECK(std::find(with.begin(), with.end(), "dx_3049") != with.end());
  CHECK(std::find(without.begin(), without.end(), "dx_3049") == without.end());
  CHECK(std::find(without.begin(), without.end(), "dx_30000") != without.end());
}

TEST_CASE("unknown command is a user error") {
  auto cfg = parse_config(smoke_config(fresh_dir("cmd")));
  CHECK_THROWS_AS(run_command("frobnicate", cfg), UserError);
}
