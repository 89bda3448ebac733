#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.h"
#include "config.h"

namespace cli = resflow::cli;

int main(int argc, char** argv) {
  CLI::App app{"resflow: bucketed tile inference over large rasters"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_option("-c,--config", config_path, "Config file (key = value lines)");
  app.add_option("-s,--set", overrides, "Override one key, e.g. --set workers=8")->take_all();
  app.add_flag("--print-config", print_config, "Print the effective config and exit");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "Generate synthetic scenes and truth masks"},
      {"partition", "Embed, cluster and hash tiles; build the image gallery"},
      {"train", "Train one model per bucket and register it"},
      {"infer", "Run the three-stage pipeline and write masks"},
      {"bench", "Sweep workers and scene counts; write bench.csv"},
      {"report", "Score masks against truth and summarize metrics"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  cli::RunConfig config;
  try {
    if (!config_path.empty()) config = cli::LoadConfig(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw cli::ConfigError("--set expects key=value, got '" + kv + "'");
      cli::SetConfigValue(&config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cli::ApplyEnvironment(&config);
    cli::ValidateConfig(config);
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kExitConfig;
  }
  if (print_config) {
    std::cout << cli::EmitConfig(config);
    return cli::kExitOk;
  }

  try {
    if (command == "synth") {
      cli::CmdSynth(config, std::cout);
    } else if (command == "partition") {
      cli::CmdPartition(config, std::cout);
    } else if (command == "train") {
      cli::CmdTrain(config, std::cout);
    } else if (command == "infer") {
      cli::CmdInfer(config, std::cout);
    } else if (command == "bench") {
      cli::CmdBench(config, std::cout);
    } else if (command == "report") {
      cli::CmdReport(config, std::cout);
    }
  } catch (const resflow::Error& e) {
    std::cerr << "error [" << resflow::ErrorCodeName(e.code()) << "]: " << e.what() << "\n";
    return cli::ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitPipeline;
  }
  return cli::kExitOk;
}
