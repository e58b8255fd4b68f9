#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dna/trainer.hpp"

namespace dna {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

}  // namespace detail

// Flat `key = value` text configuration. One assignment per line, `#` starts
// a comment, keys are case-sensitive. Typed getters record which keys were
// consumed; finish() rejects anything left over so misspelled keys fail
// loudly with the offending name.
class ConfigMap {
 public:
  static ConfigMap parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path.string());
  }

  static ConfigMap parse_string(const std::string& text, const std::string& origin = "<string>") {
    ConfigMap cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: " + origin + ":" + std::to_string(line_no) +
                          ": expected 'key = value', got: " + line);
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config: " + origin + ":" + std::to_string(line_no) + ": empty key");
      if (cfg.values_.count(key))
        throw ConfigError("config: " + origin + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  long long get_int(const std::string& key, long long fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config: key '" + key + "': expected an integer, got '" + it->second +
                        "'");
    }
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) {
    const long long v = get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError("config: key '" + key + "': must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: key '" + key + "': expected true/false, got '" + it->second + "'");
  }

  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<double> out;
    std::istringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = detail::trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(std::stod(item));
      } catch (...) {
        throw ConfigError("config: key '" + key + "': bad list element '" + item + "'");
      }
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "': empty list");
    return out;
  }

  std::vector<std::size_t> get_size_list(const std::string& key,
                                         std::vector<std::size_t> fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> doubles = get_double_list(key, {});
    std::vector<std::size_t> out;
    for (double v : doubles) {
      if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
        throw ConfigError("config: key '" + key + "': expected nonnegative integers");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> doubles = get_double_list(key, {});
    std::vector<int> out;
    for (double v : doubles) out.push_back(static_cast<int>(v));
    return out;
  }

  // Rejects keys that no getter consumed.
  void finish() const {
    for (const auto& [key, value] : values_) {
      if (!consumed_.count(key))
        throw ConfigError("config: " + origin_ + ": unknown key '" + key + "'");
    }
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// Hyperparameter presets. "dna" is the fine-tuned main-study setting;
// "table4" is the coarse-search column as printed (E_V = 2, lambda_pi =
// 0.95); "ppo" is the tuned joint-network baseline; "ppo_orig" is the
// original PPO recipe with linearly annealed learning rate and entropy
// bonus.
inline void apply_preset(TrainSetup& setup, const std::string& name) {
  if (name == "dna") return;  // struct defaults
  if (name == "table4") {
    setup.dna.epochs_value = 2;
    setup.dna.lambda_pi = 0.95;
    return;
  }
  if (name == "ppo") {
    setup.dna.mode = TrainMode::ppo_joint;
    setup.dna.lambda_pi = 0.95;
    setup.dna.lambda_v = 0.95;
    setup.dna.epochs_policy = 2;
    return;
  }
  if (name == "ppo_orig") {
    setup.dna.mode = TrainMode::ppo_joint;
    setup.dna.lambda_pi = 0.95;
    setup.dna.lambda_v = 0.95;
    setup.dna.epsilon = 0.1;
    setup.dna.gamma = 0.99;
    setup.dna.agents = 8;
    setup.dna.epochs_policy = 3;
    setup.dna.mb_policy = 256;
    setup.dna.anneal_lr = true;
    return;
  }
  throw ConfigError("config: unknown preset '" + name + "'");
}

inline TrainSetup parse_train_setup(ConfigMap& cfg) {
  TrainSetup setup;
  apply_preset(setup, cfg.get_string("preset", "dna"));

  setup.dna.mode = parse_train_mode(cfg.get_string(
      "mode", setup.dna.mode == TrainMode::ppo_joint ? "ppo_joint" : "dna_dual"));
  setup.dna.gamma = cfg.get_double("gamma", setup.dna.gamma);
  setup.dna.lambda_pi = cfg.get_double("lambda_pi", setup.dna.lambda_pi);
  setup.dna.lambda_v = cfg.get_double("lambda_v", setup.dna.lambda_v);
  setup.dna.epsilon = cfg.get_double("epsilon", setup.dna.epsilon);
  setup.dna.entropy_coef = cfg.get_double("entropy_coef", setup.dna.entropy_coef);
  setup.dna.lr = cfg.get_double("lr", setup.dna.lr);
  setup.dna.horizon = cfg.get_size("horizon", setup.dna.horizon);
  setup.dna.agents = cfg.get_size("agents", setup.dna.agents);
  setup.dna.epochs_policy = static_cast<int>(cfg.get_int("epochs_policy", setup.dna.epochs_policy));
  setup.dna.epochs_value = static_cast<int>(cfg.get_int("epochs_value", setup.dna.epochs_value));
  setup.dna.epochs_distil = static_cast<int>(cfg.get_int("epochs_distil", setup.dna.epochs_distil));
  setup.dna.beta = cfg.get_double("beta", setup.dna.beta);
  setup.dna.mb_policy = cfg.get_size("mb_policy", setup.dna.mb_policy);
  setup.dna.mb_value = cfg.get_size("mb_value", setup.dna.mb_value);
  setup.dna.mb_distil = cfg.get_size("mb_distil", setup.dna.mb_distil);
  setup.dna.grad_clip = cfg.get_double("grad_clip", setup.dna.grad_clip);
  setup.dna.total_interactions = cfg.get_int("total_interactions", setup.dna.total_interactions);
  setup.dna.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  setup.dna.anneal_lr = cfg.get_bool("anneal_lr", setup.dna.anneal_lr);
  setup.dna.value_coef = cfg.get_double("value_coef", setup.dna.value_coef);

  setup.hidden = cfg.get_size_list("hidden", setup.hidden);
  setup.activation = parse_activation(cfg.get_string("activation", "relu"));
  setup.init = parse_init_scheme(cfg.get_string("init", "orthogonal"));

  setup.env.name = cfg.get_string("env", setup.env.name);
  setup.env.grid_size = static_cast<int>(cfg.get_int("grid_size", setup.env.grid_size));
  setup.env.timeout = static_cast<int>(cfg.get_int("timeout", setup.env.timeout));
  setup.env.sticky_prob = cfg.get_double("sticky_prob", setup.env.sticky_prob);
  setup.env.repeat_threshold =
      static_cast<int>(cfg.get_int("repeat_threshold", setup.env.repeat_threshold));
  setup.env.repeat_penalty = cfg.get_double("repeat_penalty", setup.env.repeat_penalty);
  setup.env.warmup = cfg.get_bool("warmup", setup.env.warmup);

  setup.probe_enabled = cfg.get_bool("probe_enabled", setup.probe_enabled);
  setup.probe_b_small = cfg.get_size("probe_b_small", setup.probe_b_small);
  setup.probe_b_big = cfg.get_size("probe_b_big", setup.probe_b_big);
  setup.probe_ema_decay = cfg.get_double("probe_ema_decay", setup.probe_ema_decay);

  setup.checkpoint_interval =
      static_cast<int>(cfg.get_int("checkpoint_interval", setup.checkpoint_interval));
  setup.eval_episodes = static_cast<int>(cfg.get_int("eval_episodes", setup.eval_episodes));
  setup.eval_interval = static_cast<int>(cfg.get_int("eval_interval", setup.eval_interval));

  try {
    setup.dna.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return setup;
}

}  // namespace dna
