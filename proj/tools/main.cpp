#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradmap/gradcheck.hpp"
#include "gradmap/io.hpp"
#include "gradmap/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#ifndef GRADMAP_DATA_DIR
#define GRADMAP_DATA_DIR "data"
#endif

std::string resolve_fixture(const std::string& name) {
  static const std::map<std::string, std::string> named = {
      {"small2bus", "feeder_2bus.json"},
      {"small4bus", "feeder_4bus.json"},
      {"weak4bus", "feeder_4bus_weak.json"},
  };
  auto it = named.find(name);
  const std::string file = it != named.end() ? it->second : name;
  if (fs::exists(file)) return file;
  const fs::path bundled = fs::path(GRADMAP_DATA_DIR) / file;
  if (fs::exists(bundled)) return bundled.string();
  throw std::invalid_argument("feeder fixture not found: " + name);
}

// Settings shared by the file-driven subcommands, with the layering
// flags > config file > defaults.
struct Settings {
  std::string config_path;
  std::string feeder_path;
  std::string fleet_path;
  std::string scenario_path;
  std::string out_dir = "out";
  std::string mode = "gradmap";
  std::string checkpoint;
  std::uint64_t seed = 0;
  int workers = 1;

  // training hyper-parameters
  int k_dual = 10;
  int k_primal = 5;
  int k_prox = 40;
  int batch_size = 32;
  double lr = 5e-4;
  double lr_gradma = 2e-3;
  double dual_rate = 150.0;
  double tau = 0.01;
  double m_cost = 200.0;
  bool freeze_volt_dual = false;

  // scenario generation
  int gen_agents = 10;
  int gen_days = 6;
  double dt = 1.0;
  int steps_per_day = 24;
};

void add_common(CLI::App* cmd, Settings& s) {
  cmd->add_option("--config", s.config_path, "JSON config file");
  cmd->add_option("--feeder", s.feeder_path, "feeder description JSON");
  cmd->add_option("--fleet", s.fleet_path, "device fleet JSON");
  cmd->add_option("--scenario", s.scenario_path, "scenario JSON");
  cmd->add_option("--seed", s.seed, "random seed");
  cmd->add_option("--mode", s.mode, "gradmap | gradma | naive");
  cmd->add_option("--out", s.out_dir, "output directory");
  cmd->add_option("--workers", s.workers, "rollout worker threads");
}

void add_training(CLI::App* cmd, Settings& s) {
  cmd->add_option("--k-dual", s.k_dual, "dual iterations");
  cmd->add_option("--k-primal", s.k_primal, "primal steps per dual iteration");
  cmd->add_option("--k-prox", s.k_prox, "proximal surrogate steps per batch");
  cmd->add_option("--batch", s.batch_size, "episodes per batch");
  cmd->add_option("--lr", s.lr, "surrogate learning rate");
  cmd->add_option("--lr-gradma", s.lr_gradma, "learning rate in gradma mode");
  cmd->add_option("--dual-rate", s.dual_rate, "dual ascent step size");
  cmd->add_option("--tau", s.tau, "entropy coefficient");
  cmd->add_option("--m-cost", s.m_cost, "cost normalisation constant");
  cmd->add_flag("--freeze-volt-dual", s.freeze_volt_dual,
                "keep the voltage multiplier at zero");
}

// Config-file values fill in anything the command line left untouched.
void apply_config(const CLI::App& cmd, Settings& s) {
  if (s.config_path.empty()) return;
  std::ifstream in(s.config_path);
  if (!in) throw std::invalid_argument("cannot open config: " + s.config_path);
  json cfg;
  in >> cfg;

  auto set_if = [&](const char* flag, const char* key, auto& slot) {
    using T = std::decay_t<decltype(slot)>;
    const auto* opt = cmd.get_option_no_throw(flag);
    const bool from_cli = opt != nullptr && opt->count() > 0;
    if (!from_cli && cfg.contains(key)) slot = cfg.at(key).get<T>();
  };
  set_if("--feeder", "feeder", s.feeder_path);
  set_if("--fleet", "fleet", s.fleet_path);
  set_if("--scenario", "scenario", s.scenario_path);
  set_if("--seed", "seed", s.seed);
  set_if("--mode", "mode", s.mode);
  set_if("--out", "out", s.out_dir);
  set_if("--workers", "workers", s.workers);
  set_if("--k-dual", "k_dual", s.k_dual);
  set_if("--k-primal", "k_primal", s.k_primal);
  set_if("--k-prox", "k_prox", s.k_prox);
  set_if("--batch", "batch_size", s.batch_size);
  set_if("--lr", "lr", s.lr);
  set_if("--lr-gradma", "lr_gradma", s.lr_gradma);
  set_if("--dual-rate", "dual_rate", s.dual_rate);
  set_if("--tau", "tau", s.tau);
  set_if("--m-cost", "m_cost", s.m_cost);
  set_if("--freeze-volt-dual", "freeze_volt_dual", s.freeze_volt_dual);
  set_if("--agents", "agents", s.gen_agents);
  set_if("--days", "days", s.gen_days);
  set_if("--dt", "dt", s.dt);
  set_if("--steps-per-day", "steps_per_day", s.steps_per_day);
}

void print_resolved(const Settings& s, const std::string& cmd) {
  std::cout << "# resolved config (" << cmd << ")\n"
            << "feeder=" << s.feeder_path << "\n"
            << "fleet=" << s.fleet_path << "\n"
            << "scenario=" << s.scenario_path << "\n"
            << "out=" << s.out_dir << "\n"
            << "mode=" << s.mode << "\n"
            << "seed=" << s.seed << "\n"
            << "workers=" << s.workers << "\n"
            << "k_dual=" << s.k_dual << "\n"
            << "k_primal=" << s.k_primal << "\n"
            << "k_prox=" << s.k_prox << "\n"
            << "batch_size=" << s.batch_size << "\n"
            << "lr=" << s.lr << "\n"
            << "lr_gradma=" << s.lr_gradma << "\n"
            << "dual_rate=" << s.dual_rate << "\n"
            << "tau=" << s.tau << "\n"
            << "m_cost=" << s.m_cost << "\n"
            << "freeze_volt_dual=" << (s.freeze_volt_dual ? 1 : 0) << "\n"
            << "dt=" << s.dt << "\n"
            << "steps_per_day=" << s.steps_per_day << "\n";
}

gradmap::trainer::TrainConfig to_train_config(const Settings& s) {
  gradmap::trainer::TrainConfig cfg;
  cfg.k_dual = s.k_dual;
  cfg.k_primal = s.k_primal;
  cfg.k_prox = s.k_prox;
  cfg.learning_rate = s.lr;
  cfg.learning_rate_gradma = s.lr_gradma;
  cfg.dual_rate = s.dual_rate;
  cfg.tau = s.tau;
  cfg.m_cost = s.m_cost;
  cfg.batch_size = s.batch_size;
  cfg.seed = s.seed;
  cfg.mode = gradmap::trainer::parse_mode(s.mode);
  cfg.freeze_volt_dual = s.freeze_volt_dual;
  cfg.workers = s.workers;
  return cfg;
}

void write_eval(const gradmap::trainer::EvalMetrics& metrics,
                const fs::path& out_dir) {
  gradmap::io::write_metrics(metrics, (out_dir / "metrics.csv").string());
  std::cout << "total_cost=" << metrics.total_cost
            << " mean_bend=" << metrics.mean_bend
            << " mean_hend=" << metrics.mean_hend
            << " max_volt_violation_pu=" << metrics.max_volt_violation_pu
            << "\n";
}

int run_gen_scenario(const Settings& s) {
  print_resolved(s, "gen-scenario");
  const auto scen = gradmap::scenario::generate_synthetic(
      s.seed, s.gen_agents, s.gen_days, s.dt, s.steps_per_day);
  fs::create_directories(s.out_dir);
  const fs::path out = fs::path(s.out_dir) / "scenario.json";
  gradmap::io::save_scenario(scen, out.string());
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int run_train(const Settings& s) {
  print_resolved(s, "train");
  const auto model = gradmap::feeder::load_network(s.feeder_path);
  const auto fleet = gradmap::io::load_fleet(s.fleet_path);
  const auto scen = gradmap::io::load_scenario(s.scenario_path);
  fs::create_directories(s.out_dir);
  const fs::path out_dir(s.out_dir);

  if (s.mode == "naive") {  // evaluation-only, nothing to train
    const auto metrics = gradmap::trainer::naive_baseline(fleet, model, scen);
    write_eval(metrics, out_dir);
    return 0;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = gradmap::trainer::train(to_train_config(s), fleet, model, scen);
  const auto t1 = std::chrono::steady_clock::now();
  // Wall time goes to stderr only: the training log must be reproducible
  // byte for byte across runs.
  std::cerr << "training wall time: "
            << std::chrono::duration<double>(t1 - t0).count() << " s\n";

  gradmap::io::write_training_log(result.log,
                                  (out_dir / "training_log.csv").string());
  for (size_t m = 0; m < result.checkpoints.size(); ++m) {
    gradmap::io::save_checkpoint(
        result.checkpoints[m], fleet,
        (out_dir / ("checkpoint_" + std::to_string(m + 1) + ".json")).string());
  }
  const auto metrics =
      gradmap::trainer::evaluate(result.policies, fleet, model, scen, true);
  write_eval(metrics, out_dir);
  return 0;
}

int run_eval(const Settings& s) {
  print_resolved(s, "eval");
  const auto model = gradmap::feeder::load_network(s.feeder_path);
  const auto fleet = gradmap::io::load_fleet(s.fleet_path);
  const auto scen = gradmap::io::load_scenario(s.scenario_path);
  fs::create_directories(s.out_dir);

  gradmap::trainer::EvalMetrics metrics;
  if (s.mode == "naive") {
    metrics = gradmap::trainer::naive_baseline(fleet, model, scen);
  } else {
    if (s.checkpoint.empty()) {
      throw std::invalid_argument("eval requires --checkpoint");
    }
    const auto policies = gradmap::io::load_checkpoint(s.checkpoint, fleet);
    metrics = gradmap::trainer::evaluate(policies, fleet, model, scen, true);
  }
  write_eval(metrics, fs::path(s.out_dir));
  return 0;
}

int run_gradcheck(const Settings& s, const std::string& fixture) {
  const auto path = resolve_fixture(fixture);
  std::cout << "# gradcheck fixture=" << path << " seed=" << s.seed << "\n";
  const auto model = gradmap::feeder::load_network(path);

  const auto feeder_rep =
      gradmap::gradcheck::check_voltage_sensitivity(model, s.seed);
  std::cout << "feeder_sensitivity max_rel_err=" << feeder_rep.max_rel_err
            << " (checked " << feeder_rep.n_checked << ")\n";
  const auto dev_rep = gradmap::gradcheck::check_device_backward(s.seed);
  std::cout << "device_backward max_rel_err=" << dev_rep.max_rel_err
            << " (checked " << dev_rep.n_checked << ", skipped "
            << dev_rep.n_skipped << " kinks)\n";
  const auto roll_rep = gradmap::gradcheck::check_rollout_gradient(model, s.seed);
  std::cout << "rollout_g_a max_rel_err=" << roll_rep.max_rel_err
            << " (checked " << roll_rep.n_checked << ", skipped "
            << roll_rep.n_skipped << " kinks)\n";
  const auto sur_rep = gradmap::gradcheck::check_surrogate_tangency(model, s.seed);
  std::cout << "surrogate_tangency max_rel_err=" << sur_rep.max_rel_err << "\n";

  const bool ok = feeder_rep.max_rel_err <= 1e-4 && dev_rep.max_rel_err <= 1e-6 &&
                  roll_rep.max_rel_err <= 1e-3 && sur_rep.max_rel_err <= 1e-10;
  if (!ok) {
    std::cerr << "gradient check beyond tolerance\n";
    return 2;
  }
  return 0;
}

int run_export_traces(const Settings& s, int n_episodes) {
  print_resolved(s, "export-traces");
  const auto model = gradmap::feeder::load_network(s.feeder_path);
  const auto fleet = gradmap::io::load_fleet(s.fleet_path);
  const auto scen = gradmap::io::load_scenario(s.scenario_path);

  gradmap::policy::PolicySet policies;
  if (!s.checkpoint.empty()) {
    policies = gradmap::io::load_checkpoint(s.checkpoint, fleet);
  } else {
    policies = gradmap::policy::PolicySet::init(fleet.size(), s.seed);
  }

  const fs::path dir = fs::path(s.out_dir) / "traces";
  fs::create_directories(dir);
  const int first_day = scen.test_days >= scen.n_days ? 0 : scen.train_days;
  for (int k = 0; k < n_episodes; ++k) {
    const int day = first_day + k % std::max(1, scen.n_days - first_day);
    gradmap::rollout::SimOptions opts;
    opts.deterministic = true;
    const auto trace = gradmap::rollout::simulate_episode(policies, fleet, model,
                                                          scen, day, opts);
    gradmap::io::export_trace(
        trace, fleet, model,
        (dir / ("episode_" + std::to_string(k) + ".csv")).string(),
        (dir / ("voltage_" + std::to_string(k) + ".csv")).string());
  }
  std::cout << "wrote " << n_episodes << " traces to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decentralised grid-edge policy training"};
  app.require_subcommand(1);
  Settings s;

  auto* gen = app.add_subcommand("gen-scenario", "generate a synthetic scenario");
  add_common(gen, s);
  gen->add_option("--agents", s.gen_agents, "number of agents");
  gen->add_option("--days", s.gen_days, "number of days");
  gen->add_option("--dt", s.dt, "step length in hours");
  gen->add_option("--steps-per-day", s.steps_per_day, "steps per day");

  auto* train = app.add_subcommand("train", "train policies");
  add_common(train, s);
  add_training(train, s);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, s);
  eval->add_option("--checkpoint", s.checkpoint, "checkpoint JSON");

  std::string fixture = "small4bus";
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference suites");
  add_common(gc, s);
  gc->add_option("--fixture", fixture, "feeder fixture name or path");

  int n_episodes = 1;
  auto* expt = app.add_subcommand("export-traces", "export evaluation episodes");
  add_common(expt, s);
  expt->add_option("--checkpoint", s.checkpoint, "checkpoint JSON");
  expt->add_option("--episodes", n_episodes, "number of episodes to export");

  try {
    app.parse(argc, argv);
    CLI::App* cmd = app.get_subcommands().front();
    apply_config(*cmd, s);
    if (cmd == gen) return run_gen_scenario(s);
    if (cmd == train) return run_train(s);
    if (cmd == eval) return run_eval(s);
    if (cmd == gc) return run_gradcheck(s, fixture);
    return run_export_traces(s, n_episodes);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const gradmap::feeder::DegenerateVoltage& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const gradmap::feeder::FeederError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const gradmap::scenario::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const gradmap::scenario::GapError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    // NaN aborts and all-episode power-flow failures land here.
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
}
