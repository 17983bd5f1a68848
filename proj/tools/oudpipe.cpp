#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "oudpipe/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"oudpipe - opioid use disorder prediction pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  bool ablate = false;

  std::string command;
  for (const char* name : {"synth", "cohort", "featurize", "select", "train", "evaluate",
                           "report", "run-all"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "pipeline config JSON")->required();
    sub->add_option("--seed", seed_override, "override the top-level seed");
    sub->add_flag("--ablate-dependency-history", ablate,
                  "drop opioid-dependency-history features (Table 4 scenario)");
    sub->callback([&command, name] { command = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    auto json = nlohmann::json::object();
    {
      std::ifstream in(config_path);
      if (!in) throw oudpipe::UserError("cannot open config: " + config_path);
      in >> json;
    }
    if (seed_override) json["seed"] = *seed_override;
    if (ablate) json["featurize"]["ablate_dependency_history"] = true;
    auto config = oudpipe::parse_config(json);
    oudpipe::run_command(command, config);
    return 0;
  } catch (const oudpipe::UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
