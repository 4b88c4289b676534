#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fovdet/config.hpp"
#include "fovdet/detector.hpp"

namespace fovdet {

// Command bodies shared by the CLI binary and the tests.

struct SynthResult {
  std::string manifest_path;
  int n_records = 0;
};
SynthResult run_synth(const RunConfig& cfg);

struct BankResult {
  std::string bank_path;
  std::string similarity_csv;
  std::string pca_csv;
  int entries = 0;
};
BankResult run_bank(const RunConfig& cfg);

struct TrainRunResult {
  std::string checkpoint_path;
  std::string metrics_path;
  int steps = 0;
  double final_loss = 0.0;
};
TrainRunResult run_train(const RunConfig& cfg);

struct EvalRunResult {
  std::string focal_csv;
  std::string mismatch_csv;  // empty when no deltas were requested
  int focal_rows = 0;
};
EvalRunResult run_eval(const RunConfig& cfg);

// Maps an ablation name to its detector configuration toggles. Throws
// ConfigError for unknown names.
DetectorConfig detector_config_for_ablation(const RunConfig& cfg,
                                            const std::string& ablation);

// flag spelling -> config key, per command; the single source the CLI builds
// its options from and the registry test checks against.
struct FlagSpec {
  std::string flag;
  std::string key;
};
const std::vector<std::pair<std::string, std::vector<FlagSpec>>>&
cli_command_flags();

}  // namespace fovdet
