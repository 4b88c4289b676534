#pragma once

#include <map>
#include <string>
#include <vector>

namespace fovdet {

// One tunable. The registry below is the single source of truth: the CLI
// exposes exactly these keys, the config-file parser and environment lookup
// accept exactly these keys, and unknown keys are rejected everywhere.
struct ConfigKey {
  std::string name;
  std::string def;
  std::string help;
};

const std::vector<ConfigKey>& config_registry();
bool is_known_key(const std::string& name);

// Resolved key -> value map. Precedence: CLI flag > config file >
// environment (FOVDET_* with dots as underscores) > registry default.
class RunConfig {
 public:
  static RunConfig defaults();

  // Applies sources in increasing precedence. `overrides` holds CLI values.
  static RunConfig resolve(const std::map<std::string, std::string>& overrides,
                           const std::string& config_file_path = "");

  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  // Sorted `key = value` lines; also what idempotence hashes are taken over.
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

std::vector<double> parse_double_list(const std::string& s);

// Parses a `key = value` per line file; '#' starts a comment.
std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace fovdet
