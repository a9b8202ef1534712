#pragma once

// Flat key=value configuration: file parsing, --set overrides, the
// MSPLAB_SEED environment override, and typed builders for every config
// struct. Keys are namespaced (task.*, model.*, train.*, objective.*,
// scenario.*, matrix.*, io.*).

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "msplab/dataset.hpp"
#include "msplab/matrix.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"
#include "msplab/trainer.hpp"

namespace msplab {

class KeyValues {
 public:
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  // Typed getters fall back to the default when the key is absent and throw
  // ConfigError when the stored text does not parse. Reads are tracked so
  // unused (likely misspelled) keys can be reported.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<uint64_t> get_u64_list(const std::string& key,
                                     const std::vector<uint64_t>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const;

  std::vector<std::string> unused_keys() const;
  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  const std::string* find(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

// Lines hold `key = value`; blank lines and #-comments are skipped; a later
// duplicate key wins. DataError on lines without '='.
KeyValues parse_config_file(const std::string& path);
KeyValues parse_config_text(const std::string& text, const std::string& origin);

// "key=value" as given to --set. ConfigError without '=' or with empty key.
void apply_override(KeyValues& kv, const std::string& assignment);

// MSPLAB_SEED, when set, overrides task.seed, train.seed and scenario.seed.
// ConfigError when the variable does not parse as an unsigned integer.
void apply_env_seed(KeyValues& kv);

SyntheticTaskSpec task_from(const KeyValues& kv);
// Model dims default to the task's derived sizes so the two cannot drift.
ModelConfig model_from(const KeyValues& kv, const SyntheticTaskSpec& task);
TrainConfig train_from(const KeyValues& kv);
ObjectiveConfig objective_from(const KeyValues& kv);
ScenarioConfig scenario_from(const KeyValues& kv);
MatrixConfig matrix_from(const KeyValues& kv);

// "p_img,p_txt" (the --scenario flag), e.g. "1.0,0.3".
ScenarioConfig parse_scenario_pair(const std::string& text);
// Semicolon-joined pairs, e.g. "1.0,0.3;0.3,1.0;0.65,0.65".
std::vector<ScenarioConfig> parse_scenario_list(const std::string& text);

}  // namespace msplab
