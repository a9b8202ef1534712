#include "msplab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "msplab/errors.hpp"

namespace msplab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " needs a number, got '" + text + "'");
  }
}

int parse_int(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " needs an integer, got '" + text + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
    uint64_t v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " needs an unsigned integer, got '" + text + "'");
  }
}

}  // namespace

void KeyValues::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool KeyValues::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string* KeyValues::find(const std::string& key) const {
  touched_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  return v ? parse_double(key, *v) : fallback;
}

int KeyValues::get_int(const std::string& key, int fallback) const {
  const std::string* v = find(key);
  return v ? parse_int(key, *v) : fallback;
}

uint64_t KeyValues::get_u64(const std::string& key, uint64_t fallback) const {
  const std::string* v = find(key);
  return v ? parse_u64(key, *v) : fallback;
}

std::vector<int> KeyValues::get_int_list(const std::string& key,
                                         const std::vector<int>& fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const auto& tok : split(*v, ',')) out.push_back(parse_int(key, tok));
  return out;
}

std::vector<uint64_t> KeyValues::get_u64_list(const std::string& key,
                                              const std::vector<uint64_t>& fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<uint64_t> out;
  for (const auto& tok : split(*v, ',')) out.push_back(parse_u64(key, tok));
  return out;
}

std::vector<std::string> KeyValues::get_string_list(
    const std::string& key, const std::vector<std::string>& fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  for (const auto& tok : split(*v, ',')) out.push_back(tok);
  return out;
}

std::vector<std::string> KeyValues::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!touched_.count(k)) out.push_back(k);
  return out;
}

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError(origin + " line " + std::to_string(lineno) +
                      ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw DataError(origin + " line " + std::to_string(lineno) + ": empty config key");
    kv.set(key, trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("--set has an empty key in '" + assignment + "'");
  kv.set(key, trim(assignment.substr(eq + 1)));
}

void apply_env_seed(KeyValues& kv) {
  const char* env = std::getenv("MSPLAB_SEED");
  if (!env) return;
  const uint64_t seed = parse_u64("MSPLAB_SEED", env);
  const std::string text = std::to_string(seed);
  // Tool-injected, not user-typed: read back so commands that need only a
  // subset of the seed keys do not report the rest as unused.
  for (const char* key : {"task.seed", "train.seed", "scenario.seed"}) {
    kv.set(key, text);
    kv.get_u64(key, 0);
  }
}

SyntheticTaskSpec task_from(const KeyValues& kv) {
  SyntheticTaskSpec spec;
  spec.A = kv.get_int("task.A", spec.A);
  spec.B = kv.get_int("task.B", spec.B);
  spec.image_h = kv.get_int("task.image_h", spec.image_h);
  spec.image_w = kv.get_int("task.image_w", spec.image_w);
  spec.max_text_len = kv.get_int("task.max_text_len", spec.max_text_len);
  spec.sig_group_size = kv.get_int("task.sig_group_size", spec.sig_group_size);
  spec.distractor_pool = kv.get_int("task.distractor_pool", spec.distractor_pool);
  spec.noise_sigma = kv.get_double("task.noise_sigma", spec.noise_sigma);
  spec.text_noise = kv.get_double("task.text_noise", spec.text_noise);
  spec.n_samples = kv.get_int("task.n_samples", spec.n_samples);
  spec.seed = kv.get_u64("task.seed", spec.seed);
  return spec;
}

ModelConfig model_from(const KeyValues& kv, const SyntheticTaskSpec& task) {
  ModelConfig cfg;
  cfg.d_model = kv.get_int("model.d_model", cfg.d_model);
  cfg.n_layers = kv.get_int("model.n_layers", cfg.n_layers);
  cfg.n_heads = kv.get_int("model.n_heads", cfg.n_heads);
  cfg.ffn_mult = kv.get_int("model.ffn_mult", cfg.ffn_mult);
  cfg.vocab_size = kv.get_int("model.vocab_size", task.vocab_size());
  cfg.max_text_len = kv.get_int("model.max_text_len", task.max_text_len);
  cfg.patch_size = kv.get_int("model.patch_size", cfg.patch_size);
  cfg.image_h = kv.get_int("model.image_h", task.image_h);
  cfg.image_w = kv.get_int("model.image_w", task.image_w);
  cfg.n_classes = kv.get_int("model.n_classes", task.n_classes());
  cfg.prompt_len = kv.get_int("model.prompt_len", cfg.prompt_len);
  cfg.prompt_layers = kv.get_int_list("model.prompt_layers", cfg.prompt_layers);
  return cfg;
}

TrainConfig train_from(const KeyValues& kv) {
  TrainConfig tc;
  tc.lr = kv.get_double("train.lr", tc.lr);
  tc.weight_decay = kv.get_double("train.weight_decay", tc.weight_decay);
  tc.beta1 = kv.get_double("train.beta1", tc.beta1);
  tc.beta2 = kv.get_double("train.beta2", tc.beta2);
  tc.adam_eps = kv.get_double("train.adam_eps", tc.adam_eps);
  tc.batch_size = kv.get_int("train.batch_size", tc.batch_size);
  tc.epochs = kv.get_int("train.epochs", tc.epochs);
  tc.seed = kv.get_u64("train.seed", tc.seed);
  tc.mode = parse_mode(kv.get_string("train.mode", to_string(tc.mode)));
  tc.strategy = parse_strategy(kv.get_string("train.strategy", to_string(tc.strategy)));
  tc.lambda = kv.get_double("train.lambda", tc.lambda);
  return tc;
}

ObjectiveConfig objective_from(const KeyValues& kv) {
  ObjectiveConfig oc;
  oc.lambda = kv.get_double("objective.lambda", oc.lambda);
  oc.eps = kv.get_double("objective.eps", oc.eps);
  oc.task_kind = parse_task_kind(kv.get_string("objective.task_kind", to_string(oc.task_kind)));
  return oc;
}

ScenarioConfig scenario_from(const KeyValues& kv) {
  ScenarioConfig sc;
  sc.p_img = kv.get_double("scenario.p_img", sc.p_img);
  sc.p_txt = kv.get_double("scenario.p_txt", sc.p_txt);
  sc.seed = kv.get_u64("scenario.seed", sc.seed);
  return sc;
}

ScenarioConfig parse_scenario_pair(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != 2)
    throw ConfigError("scenario must be 'p_img,p_txt', got '" + text + "'");
  ScenarioConfig sc;
  sc.p_img = parse_double("scenario p_img", parts[0]);
  sc.p_txt = parse_double("scenario p_txt", parts[1]);
  sc.validate();
  return sc;
}

std::vector<ScenarioConfig> parse_scenario_list(const std::string& text) {
  std::vector<ScenarioConfig> out;
  for (const auto& pair : split(text, ';'))
    if (!pair.empty()) out.push_back(parse_scenario_pair(pair));
  if (out.empty()) throw ConfigError("scenario list is empty: '" + text + "'");
  return out;
}

MatrixConfig matrix_from(const KeyValues& kv) {
  MatrixConfig cfg;
  if (kv.has("matrix.train_scenarios"))
    cfg.train_scenarios =
        parse_scenario_list(kv.get_string("matrix.train_scenarios", ""));
  if (kv.has("matrix.eval_scenarios"))
    cfg.eval_scenarios = parse_scenario_list(kv.get_string("matrix.eval_scenarios", ""));
  cfg.strategies = kv.get_string_list("matrix.strategies", cfg.strategies);
  cfg.seeds = kv.get_u64_list("matrix.seeds", cfg.seeds);
  cfg.n_eval = kv.get_int("matrix.n_eval", cfg.n_eval);
  cfg.workers = kv.get_int("matrix.workers", cfg.workers);
  cfg.task = task_from(kv);
  cfg.model = model_from(kv, cfg.task);
  cfg.train = train_from(kv);
  cfg.objective = objective_from(kv);
  return cfg;
}

}  // namespace msplab
