#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgrl/approx.hpp"
#include "mgrl/envs.hpp"
#include "mgrl/mdp_io.hpp"
#include "mgrl/metrics.hpp"
#include "mgrl/tabular.hpp"

namespace mgrl {

constexpr const char* kCodeVersion = "mgrl 1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One reproducible run description. Parsed from flat `key = value` text
/// (optionally namespaced by [section] headers); unknown keys are rejected.
struct ExperimentConfig {
  Algo algo = Algo::uvfa;
  long seed = 0;

  std::string env_kind = "random_mdp";  // random_mdp | det_mdp |
                                        // freeze_random_mdp | dyadic_tree |
                                        // mdp_file | torus
  int env_states = 6;
  int env_actions = 2;
  int env_branching = 2;
  int env_depth = 3;          // dyadic_tree
  double env_discount = 0.9;
  long env_mdp_seed = 1;      // generator seed for the random environments
  std::string env_file;       // mdp_file

  TorusEnv torus = TorusEnv::defaults(2);
  TabularTrainConfig tabular;
  DeepTrainConfig deep;
  double c_delta = 1e-2;  // Dirac reward scaling for deep delta-DQN
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct KeyValues {
  std::map<std::string, std::string> kv;
  std::set<std::string> consumed;

  bool has(const std::string& k) const { return kv.count(k) > 0; }

  template <typename F>
  void take(const std::string& k, F&& apply) {
    auto it = kv.find(k);
    if (it == kv.end()) return;
    consumed.insert(k);
    apply(it->second);
  }
  void take_long(const std::string& k, long& out) {
    take(k, [&](const std::string& v) {
      try {
        out = std::stol(v);
      } catch (...) {
        throw ConfigError("config: key '" + k + "' expects an integer, got '" + v + "'");
      }
    });
  }
  void take_int(const std::string& k, int& out) {
    long tmp = out;
    take_long(k, tmp);
    out = static_cast<int>(tmp);
  }
  void take_size(const std::string& k, std::size_t& out) {
    long tmp = static_cast<long>(out);
    take_long(k, tmp);
    if (tmp < 0) throw ConfigError("config: key '" + k + "' must be non-negative");
    out = static_cast<std::size_t>(tmp);
  }
  void take_real(const std::string& k, double& out) {
    take(k, [&](const std::string& v) {
      try {
        out = std::stod(v);
      } catch (...) {
        throw ConfigError("config: key '" + k + "' expects a number, got '" + v + "'");
      }
    });
  }
  void take_string(const std::string& k, std::string& out) {
    take(k, [&](const std::string& v) { out = v; });
  }
  void take_int_list(const std::string& k, std::vector<int>& out) {
    take(k, [&](const std::string& v) {
      std::vector<int> parsed;
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
          parsed.push_back(std::stoi(item));
        } catch (...) {
          throw ConfigError("config: key '" + k + "' expects integers, got '" + item + "'");
        }
      }
      if (parsed.empty())
        throw ConfigError("config: key '" + k + "' expects a non-empty list");
      out = parsed;
    });
  }

  void reject_leftovers() const {
    for (const auto& [k, v] : kv)
      if (!consumed.count(k)) throw ConfigError("config: unknown key '" + k + "'");
  }
};

inline KeyValues read_key_values(std::istream& in) {
  KeyValues out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key or value");
    if (!section.empty()) key = section + "." + key;
    if (!out.kv.emplace(key, value).second)
      throw ConfigError("config: duplicate key '" + key + "'");
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(std::istream& in) {
  detail::KeyValues kv = detail::read_key_values(in);
  ExperimentConfig cfg;

  std::string algo_name_str;
  kv.take_string("algo", algo_name_str);
  if (algo_name_str.empty()) throw ConfigError("config: missing required key 'algo'");
  try {
    cfg.algo = algo_from_name(algo_name_str);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  kv.take_long("seed", cfg.seed);

  kv.take_string("env.kind", cfg.env_kind);
  bool deep = algo_is_deep(cfg.algo);
  if (deep && !kv.has("env.kind")) cfg.env_kind = "torus";
  if (deep && cfg.env_kind != "torus")
    throw ConfigError("config: deep algorithms require env.kind = torus");
  if (!deep && cfg.env_kind == "torus")
    throw ConfigError("config: tabular algorithms need a finite env.kind");

  if (cfg.env_kind == "torus") {
    int dim = cfg.torus.dim;
    kv.take_int("env.dim", dim);
    cfg.torus = TorusEnv::defaults(dim);  // sigma tracks 0.1/n unless overridden
    kv.take_real("env.step_size", cfg.torus.step_size);
    kv.take_real("env.noise_sigma", cfg.torus.noise_sigma);
    kv.take("env.noise_isotropic", [&](const std::string& v) {
      if (v == "true" || v == "1")
        cfg.torus.noise_isotropic = true;
      else if (v == "false" || v == "0")
        cfg.torus.noise_isotropic = false;
      else
        throw ConfigError("config: env.noise_isotropic expects true/false");
    });
    kv.take_real("env.reward_eps", cfg.torus.reward_eps);
    kv.take_int("env.horizon", cfg.torus.horizon);
    kv.take_real("env.discount", cfg.torus.discount);
    cfg.torus.validate();
  } else if (cfg.env_kind == "random_mdp" || cfg.env_kind == "det_mdp" ||
             cfg.env_kind == "freeze_random_mdp") {
    kv.take_int("env.states", cfg.env_states);
    kv.take_int("env.actions", cfg.env_actions);
    kv.take_int("env.branching", cfg.env_branching);
    kv.take_real("env.discount", cfg.env_discount);
    kv.take_long("env.mdp_seed", cfg.env_mdp_seed);
  } else if (cfg.env_kind == "dyadic_tree") {
    kv.take_int("env.depth", cfg.env_depth);
    kv.take_real("env.discount", cfg.env_discount);
  } else if (cfg.env_kind == "mdp_file") {
    kv.take_string("env.file", cfg.env_file);
    if (cfg.env_file.empty())
      throw ConfigError("config: env.kind = mdp_file requires env.file");
  } else {
    throw ConfigError("config: unknown env.kind '" + cfg.env_kind + "'");
  }

  if (!deep) {
    kv.take_long("train.updates", cfg.tabular.total_updates);
    kv.take_int("train.horizon", cfg.tabular.horizon);
    kv.take_real("train.lr", cfg.tabular.lr);
    kv.take_real("train.lr_actor", cfg.tabular.lr_actor);
    kv.take_real("train.lr_decay", cfg.tabular.lr_decay);
    kv.take_real("train.epsilon", cfg.tabular.epsilon);
    kv.take_real("train.her_alpha", cfg.tabular.her_alpha);
    kv.take_real("train.her_pk", cfg.tabular.her_pk);
    kv.take_real("train.her_pl", cfg.tabular.her_pl);
    kv.take_int("train.target_refresh", cfg.tabular.target_refresh);
    kv.take_int("train.td_n", cfg.tabular.td_n);
    kv.take_long("train.eval_interval", cfg.tabular.eval_interval);
  } else {
    kv.take_int("deep.epochs", cfg.deep.epochs);
    kv.take_int("deep.trajs_per_epoch", cfg.deep.trajs_per_epoch);
    kv.take_int("deep.grad_steps", cfg.deep.grad_steps_per_epoch);
    kv.take_int("deep.batch", cfg.deep.batch);
    kv.take_real("deep.lr", cfg.deep.lr);
    kv.take_real("deep.target_mix", cfg.deep.target_mix);
    kv.take_real("deep.epsilon", cfg.deep.epsilon);
    kv.take_real("deep.future_prob", cfg.deep.her_future_prob);
    kv.take_real("deep.reward_scale", cfg.deep.reward_scale);
    kv.take_real("deep.c_delta", cfg.c_delta);
    kv.take_int_list("deep.hidden", cfg.deep.hidden);
    kv.take_size("deep.buffer_capacity", cfg.deep.buffer_capacity);
    kv.take_int("deep.eval_episodes", cfg.deep.eval_episodes);
    kv.take_int("deep.eval_interval", cfg.deep.eval_interval);
  }

  kv.reject_leftovers();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  return parse_experiment_config(in);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

inline FiniteMultiGoalMdp build_finite_env(const ExperimentConfig& cfg) {
  Pcg32 rng(static_cast<std::uint64_t>(cfg.env_mdp_seed), 77);
  if (cfg.env_kind == "random_mdp")
    return make_random_mdp(cfg.env_states, cfg.env_actions, cfg.env_branching,
                           cfg.env_discount, rng);
  if (cfg.env_kind == "det_mdp")
    return make_deterministic_reachable_mdp(cfg.env_states, cfg.env_actions,
                                            cfg.env_discount, rng);
  if (cfg.env_kind == "freeze_random_mdp")
    return augment_with_freeze(make_random_mdp(cfg.env_states, cfg.env_actions,
                                               cfg.env_branching,
                                               cfg.env_discount, rng));
  if (cfg.env_kind == "dyadic_tree")
    return dyadic_tree_mdp(cfg.env_depth, cfg.env_discount);
  if (cfg.env_kind == "mdp_file") return load_mdp(cfg.env_file);
  throw ConfigError("config: env.kind '" + cfg.env_kind + "' is not a finite MDP");
}

struct RunResult {
  MetricLog log;
  std::map<std::string, double> final_metrics;
};

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  RunResult out;
  Pcg32 rng(static_cast<std::uint64_t>(cfg.seed), 1);
  if (algo_is_deep(cfg.algo)) {
    TorusEnv env = cfg.torus;
    env.reward_scale = cfg.c_delta;
    DeepTrainConfig dcfg = cfg.deep;
    dcfg.seed = cfg.seed;
    DeepTrainResult res = train_torus(cfg.algo, env, dcfg, rng);
    out.log = std::move(res.log);
  } else {
    FiniteMultiGoalMdp mdp = build_finite_env(cfg);
    TabularTrainConfig tcfg = cfg.tabular;
    tcfg.seed = cfg.seed;
    TabularTrainResult res = train(cfg.algo, mdp, tcfg, rng);
    out.log = std::move(res.log);
  }
  for (const MetricRow& row : out.log) out.final_metrics[row.metric] = row.value;
  return out;
}

// ---------------------------------------------------------------------------
// CSV output (schema: step,episode,metric,value,seed)
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const MetricLog& log, std::ostream& out) {
  out << "step,episode,metric,value,seed\n";
  char num[40];
  for (const MetricRow& row : log) {
    std::snprintf(num, sizeof(num), "%.17g", row.value);
    out << row.step << ',' << row.episode << ',' << row.metric << ',' << num
        << ',' << row.seed << '\n';
  }
}

inline void write_metrics_csv(const MetricLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: bytewise reproducible
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_metrics_csv(log, out);
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace mgrl
