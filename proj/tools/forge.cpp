#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "forge/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"influence-driven training-data mixture optimization"};
  app.require_subcommand(1);

  struct Args {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool print_config = false;
  };
  Args args;
  std::string chosen;

  std::vector<std::string> commands = forge::kPipelineOrder;
  commands.push_back("all");
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(
        name, name == "all" ? "run every stage in order"
                            : "run the " + name + " stage");
    sub->add_option("--config", args.config_path, "run configuration file");
    sub->add_option("--seed", args.seed, "override the global seed");
    sub->add_option("--out", args.out_dir, "override the output directory");
    sub->add_flag("--print-config", args.print_config,
                  "dump the effective configuration and exit");
    sub->callback([&chosen, name]() { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    forge::RunConfig cfg = args.config_path.empty()
                               ? forge::default_run_config()
                               : forge::RunConfig::load(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.print_config) {
      cfg.validate();
      std::cout << cfg.dump();
      return 0;
    }
    return forge::run_command(chosen, cfg);
  } catch (const forge::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const forge::MissingArtifact& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
