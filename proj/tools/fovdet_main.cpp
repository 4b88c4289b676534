#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "fovdet/config.hpp"
#include "fovdet/errors.hpp"
#include "fovdet/pipeline.hpp"

namespace {

struct CommandState {
  std::map<std::string, std::string> flag_values;  // key -> raw value
  std::map<std::string, CLI::Option*> options;     // key -> option
  std::vector<std::string> sets;
  std::string config_file;
};

fovdet::RunConfig resolve(const CommandState& st) {
  std::map<std::string, std::string> overrides;
  for (const auto& s : st.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw fovdet::ConfigError("--set expects key=value, got: " + s);
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (const auto& [key, opt] : st.options) {
    if (opt->count() > 0) overrides[key] = st.flag_values.at(key);
  }
  return fovdet::RunConfig::resolve(overrides, st.config_file);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const fovdet::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const fovdet::DomainError*>(&e)) return 2;
  if (dynamic_cast<const fovdet::IoError*>(&e)) return 3;
  if (dynamic_cast<const fovdet::TrainError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fovdet: focal-aware monocular 3D detection at desk scale.\n"
      "Synthesizes datasets, builds intrinsic embedding banks, trains the\n"
      "detector, and runs focal sweeps and mismatch evaluations."};
  app.require_subcommand(1);

  std::map<std::string, CommandState> states;
  for (const auto& [cmd, flags] : fovdet::cli_command_flags()) {
    CLI::App* sub = app.add_subcommand(cmd);
    CommandState& st = states[cmd];
    for (const auto& spec : flags) {
      std::string help;
      for (const auto& k : fovdet::config_registry())
        if (k.name == spec.key) help = k.help;
      st.flag_values[spec.key];  // allocate stable storage
      st.options[spec.key] =
          sub->add_option(spec.flag, st.flag_values[spec.key], help);
    }
    sub->add_option("--config", st.config_file,
                    "config file (key = value lines)");
    sub->add_option("--set", st.sets,
                    "override any registry key as key=value (repeatable)");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synth")) {
      const auto r = fovdet::run_synth(resolve(states["synth"]));
      std::cout << "manifest: " << r.manifest_path << "\n"
                << "records: " << r.n_records << "\n";
    } else if (app.got_subcommand("bank")) {
      const auto r = fovdet::run_bank(resolve(states["bank"]));
      std::cout << "bank: " << r.bank_path << "\n"
                << "entries: " << r.entries << "\n"
                << "similarity: " << r.similarity_csv << "\n"
                << "pca: " << r.pca_csv << "\n";
    } else if (app.got_subcommand("train")) {
      const auto r = fovdet::run_train(resolve(states["train"]));
      std::cout << "checkpoint: " << r.checkpoint_path << "\n"
                << "metrics: " << r.metrics_path << "\n"
                << "steps: " << r.steps << "\n"
                << "final_loss: " << r.final_loss << "\n";
    } else if (app.got_subcommand("eval")) {
      const auto r = fovdet::run_eval(resolve(states["eval"]));
      std::cout << "focal_sweep: " << r.focal_csv << "\n"
                << "rows: " << r.focal_rows << "\n";
      if (!r.mismatch_csv.empty())
        std::cout << "mismatch: " << r.mismatch_csv << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
