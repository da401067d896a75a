// mgrl: multi-goal RL laboratory command line.
//   mgrl verify <suite> [--tol X] [--json PATH]
//   mgrl run <config> [--out DIR]
//   mgrl sweep <config> --seeds 0,1,2,3,4 [--out DIR]
//   mgrl mdp validate <file>
// Exit codes: 0 pass, 1 assertion failure, 2 usage/config error, 3 I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mgrl/experiment.hpp"
#include "mgrl/mdp_io.hpp"
#include "mgrl/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

json check_to_json(const mgrl::CheckResult& c) {
  const char* kind = c.kind == mgrl::CheckKind::residual ? "residual"
                     : c.kind == mgrl::CheckKind::margin ? "margin"
                                                         : "flag";
  return json{{"name", c.name}, {"kind", kind},     {"value", c.value},
              {"bound", c.bound}, {"pass", c.pass}, {"note", c.note}};
}

void print_suite(const mgrl::SuiteReport& rep) {
  for (const mgrl::CheckResult& c : rep.checks) {
    const char* rel = c.kind == mgrl::CheckKind::residual ? "<="
                      : c.kind == mgrl::CheckKind::margin ? ">"
                                                          : "==";
    std::printf("%s  %s/%s  value=%.6g %s %.6g%s%s\n",
                c.pass ? "PASS" : "FAIL", rep.suite.c_str(), c.name.c_str(),
                c.value, rel,
                c.kind == mgrl::CheckKind::flag ? 1.0 : c.bound,
                c.note.empty() ? "" : "  # ", c.note.c_str());
  }
}

int cmd_verify(const std::string& suite, double tol, const std::string& json_path) {
  std::vector<std::string> names;
  if (suite == "all") {
    names = mgrl::verify_suite_names();
  } else {
    auto known = mgrl::verify_suite_names();
    if (std::find(known.begin(), known.end(), suite) == known.end()) {
      std::cerr << "unknown suite '" << suite << "'. Suites: all";
      for (const auto& n : known) std::cerr << ", " << n;
      std::cerr << "\n";
      return kExitUsage;
    }
    names = {suite};
  }

  json report{{"schema_version", 1},
              {"tool", mgrl::kCodeVersion},
              {"tolerance_override", tol},
              {"suites", json::array()}};
  bool all_pass = true;
  for (const std::string& name : names) {
    mgrl::SuiteReport rep = mgrl::run_verify_suite(name, tol);
    print_suite(rep);
    json jrep{{"suite", rep.suite}, {"all_pass", rep.all_pass()},
              {"checks", json::array()}};
    for (const auto& c : rep.checks) jrep["checks"].push_back(check_to_json(c));
    report["suites"].push_back(jrep);
    all_pass = all_pass && rep.all_pass();
  }
  report["all_pass"] = all_pass;
  std::printf("%s  %zu suite(s)\n", all_pass ? "PASS" : "FAIL", names.size());

  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) {
      std::cerr << "cannot open " << json_path << " for writing\n";
      return kExitIo;
    }
    out << report.dump(2) << "\n";
  }
  return all_pass ? kExitPass : kExitFail;
}

long resolve_seed(long config_seed) {
  const char* env = std::getenv("MGRL_SEED");
  if (!env || !*env) return config_seed;
  try {
    return std::stol(env);
  } catch (...) {
    throw mgrl::ConfigError("MGRL_SEED is not an integer: " + std::string(env));
  }
}

json config_echo(const mgrl::ExperimentConfig& cfg) {
  json j{{"algo", mgrl::algo_name(cfg.algo)},
         {"seed", cfg.seed},
         {"env", cfg.env_kind}};
  if (cfg.env_kind == "torus") {
    j["dim"] = cfg.torus.dim;
    j["horizon"] = cfg.torus.horizon;
    j["discount"] = cfg.torus.discount;
  } else {
    j["states"] = cfg.env_states;
    j["discount"] = cfg.env_discount;
  }
  return j;
}

int run_one(mgrl::ExperimentConfig cfg, const fs::path& csv_path,
            const fs::path& summary_path, json* aggregate_metrics) {
  mgrl::RunResult result = mgrl::run_experiment(cfg);
  mgrl::write_metrics_csv(result.log, csv_path.string());

  json metrics;
  for (const auto& [name, value] : result.final_metrics) metrics[name] = value;
  if (aggregate_metrics) *aggregate_metrics = metrics;
  if (!summary_path.empty()) {
    json summary{{"schema_version", 1},
                 {"code_version", mgrl::kCodeVersion},
                 {"config", config_echo(cfg)},
                 {"final_metrics", metrics},
                 {"csv", csv_path.filename().string()}};
    std::ofstream out(summary_path);
    if (!out) throw std::runtime_error("cannot open " + summary_path.string());
    out << summary.dump(2) << "\n";
  }
  return kExitPass;
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  mgrl::ExperimentConfig cfg = mgrl::load_experiment_config(config_path);
  cfg.seed = resolve_seed(cfg.seed);
  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  int rc = run_one(cfg, dir / "metrics.csv", dir / "summary.json", nullptr);
  std::printf("wrote %s\n", (dir / "metrics.csv").string().c_str());
  return rc;
}

int cmd_sweep(const std::string& config_path, const std::vector<long>& seeds,
              const std::string& out_dir) {
  if (seeds.empty()) {
    std::cerr << "sweep: --seeds must list at least one seed\n";
    return kExitUsage;
  }
  mgrl::ExperimentConfig base = mgrl::load_experiment_config(config_path);
  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);

  // per-metric final values across seeds
  std::map<std::string, std::vector<double>> finals;
  for (long seed : seeds) {
    mgrl::ExperimentConfig cfg = base;
    cfg.seed = seed;
    json metrics;
    run_one(cfg, dir / ("seed_" + std::to_string(seed) + ".csv"), fs::path(),
            &metrics);
    for (auto it = metrics.begin(); it != metrics.end(); ++it)
      finals[it.key()].push_back(it.value().get<double>());
  }

  json agg{{"schema_version", 1},
           {"code_version", mgrl::kCodeVersion},
           {"config", config_echo(base)},
           {"seeds", seeds},
           {"metrics", json::object()}};
  for (const auto& [name, values] : finals) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= values.size();  // population std across the seed set
    agg["metrics"][name] = {{"mean", mean}, {"std", std::sqrt(var)}};
  }
  std::ofstream out(dir / "aggregate.json");
  if (!out) {
    std::cerr << "cannot open " << (dir / "aggregate.json").string() << "\n";
    return kExitIo;
  }
  out << agg.dump(2) << "\n";
  std::printf("wrote %s (%zu seeds)\n", (dir / "aggregate.json").string().c_str(),
              seeds.size());
  return kExitPass;
}

int cmd_mdp_validate(const std::string& path) {
  if (!fs::exists(path)) {
    std::cerr << "no such file: " << path << "\n";
    return kExitIo;
  }
  try {
    mgrl::FiniteMultiGoalMdp mdp = mgrl::load_mdp(path);
    std::printf("valid: %d states, %d actions, %d goals, discount %g%s\n",
                mdp.n_states, mdp.n_actions, mdp.n_goals, mdp.discount,
                mdp.goal_map_surjective ? "" : " (goal map not surjective)");
    return kExitPass;
  } catch (const std::exception& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return kExitFail;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mgrl: multi-goal RL laboratory"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand("verify", "run a verification suite");
  std::string suite;
  double tol = -1.0;
  std::string json_path;
  verify->add_option("suite", suite, "suite name or 'all'")->required();
  verify->add_option("--tol", tol, "override residual tolerances");
  verify->add_option("--json", json_path, "write a JSON report here");

  auto* run = app.add_subcommand("run", "execute one training run");
  std::string run_config, run_out = ".";
  run->add_option("config", run_config, "config file")->required();
  run->add_option("--out", run_out, "output directory (default .)");

  auto* sweep = app.add_subcommand("sweep", "run a config across seeds");
  std::string sweep_config, sweep_out = ".";
  std::string seeds_arg;
  sweep->add_option("config", sweep_config, "config file")->required();
  sweep->add_option("--seeds", seeds_arg, "comma-separated seed list")->required();
  sweep->add_option("--out", sweep_out, "output directory (default .)");

  auto* mdp_cmd = app.add_subcommand("mdp", "finite MDP file utilities");
  auto* mdp_validate = mdp_cmd->add_subcommand("validate", "validate an MDP file");
  std::string mdp_path;
  mdp_validate->add_option("file", mdp_path, "MDP file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (verify->parsed()) return cmd_verify(suite, tol, json_path);
    if (run->parsed()) return cmd_run(run_config, run_out);
    if (sweep->parsed()) {
      std::vector<long> seeds;
      std::stringstream ss(seeds_arg);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) seeds.push_back(std::stol(item));
      return cmd_sweep(sweep_config, seeds, sweep_out);
    }
    if (mdp_validate->parsed()) return cmd_mdp_validate(mdp_path);
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const mgrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    bool io = what.find("cannot open") != std::string::npos ||
              what.find("write failed") != std::string::npos;
    return io ? kExitIo : kExitFail;
  }
}
