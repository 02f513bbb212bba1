#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gradmap/gradcheck.hpp"
#include "gradmap/io.hpp"

using namespace gradmap;

namespace {

const std::string kDataDir = GRADMAP_DATA_DIR;

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("io_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string first_line(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("fleet files round-trip losslessly") {
  TempDir dir;
  const auto model = feeder::load_network(kDataDir + "/feeder_4bus.json");
  const auto fleet = gradcheck::desk_fleet(model, 3, 2, 2, 42);
  const std::string path = dir.file("fleet.json");
  io::save_fleet(fleet, path);
  const auto loaded = io::load_fleet(path);

  REQUIRE(loaded.size() == fleet.size());
  for (int a = 0; a < fleet.size(); ++a) {
    CHECK(loaded.agents[a].id == fleet.agents[a].id);
    CHECK(loaded.agents[a].bus == fleet.agents[a].bus);
    CHECK(loaded.agents[a].phase == fleet.agents[a].phase);
    CHECK(loaded.agents[a].type == fleet.agents[a].type);
    CHECK(loaded.agents[a].initial_state == fleet.agents[a].initial_state);
    CHECK(loaded.agents[a].power_factor == fleet.agents[a].power_factor);
    CHECK(loaded.agents[a].device_p_max() == fleet.agents[a].device_p_max());
  }
}

TEST_CASE("missing files raise validation errors") {
  CHECK_THROWS_AS(io::load_fleet("/nonexistent/fleet.json"),
                  std::invalid_argument);
  devices::DeviceFleet dummy;
  CHECK_THROWS_AS(io::load_checkpoint("/nonexistent/ck.json", dummy),
                  std::invalid_argument);
}

TEST_CASE("scenario files round-trip losslessly") {
  TempDir dir;
  const auto scen = scenario::generate_synthetic(6, 3, 2, 1.0, 12);
  const std::string path = dir.file("scenario.json");
  io::save_scenario(scen, path);
  const auto loaded = io::load_scenario(path);

  CHECK(loaded.dt == scen.dt);
  CHECK(loaded.steps_per_day == scen.steps_per_day);
  CHECK(loaded.n_days == scen.n_days);
  CHECK(loaded.train_days == scen.train_days);
  CHECK(loaded.test_days == scen.test_days);
  CHECK((loaded.load - scen.load).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.pv - scen.pv).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.temp_out - scen.temp_out).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.price_import - scen.price_import).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.stats.demand_min == scen.stats.demand_min);
  CHECK(loaded.stats.temp_max == scen.stats.temp_max);
}

TEST_CASE("checkpoints round-trip losslessly per agent id") {
  TempDir dir;
  const auto model = feeder::load_network(kDataDir + "/feeder_4bus.json");
  const auto fleet = gradcheck::desk_fleet(model, 2, 2, 1, 5);
  const auto policies = policy::PolicySet::init(fleet.size(), 77);
  const std::string path = dir.file("checkpoint.json");
  io::save_checkpoint(policies, fleet, path);
  const auto loaded = io::load_checkpoint(path, fleet);

  REQUIRE(loaded.size() == policies.size());
  for (int a = 0; a < policies.size(); ++a) {
    const VecR before = policies.agents[a].flatten();
    const VecR after = loaded.agents[a].flatten();
    CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("training log has the documented schema") {
  TempDir dir;
  std::vector<trainer::LogRow> log(2);
  log[0].dual_step = 1;
  log[0].primal_step = 1;
  log[0].mean_cost = 12.5;
  log[1].dual_step = 1;
  log[1].primal_step = 2;
  const std::string path = dir.file("training_log.csv");
  io::write_training_log(log, path);

  CHECK(first_line(path) ==
        "dual_step,primal_step,mean_cost,volt,bstp,bend,hstp,hend,grmp,"
        "lambda_volt,lambda_bstp,lambda_bend,lambda_hstp,lambda_hend,"
        "lambda_grmp,beta,trust,pf_failed_episodes,sensitivity_failures,"
        "backward_calls");
  CHECK(count_lines(path) == 3);  // header + two rows
}

TEST_CASE("trace export writes one row per step-agent and step-node-phase") {
  TempDir dir;
  const auto model = feeder::load_network(kDataDir + "/feeder_4bus.json");
  const auto fleet = gradcheck::desk_fleet(model, 2, 1, 1, 9);
  const auto scen = scenario::generate_synthetic(4, fleet.size(), 1, 1.0, 6);
  const auto policies = policy::PolicySet::init(fleet.size(), 1);
  rollout::SimOptions opts;
  opts.deterministic = true;
  const auto trace =
      rollout::simulate_episode(policies, fleet, model, scen, 0, opts);
  REQUIRE(trace.ok);

  const std::string tpath = dir.file("trace.csv");
  const std::string vpath = dir.file("voltage.csv");
  io::export_trace(trace, fleet, model, tpath, vpath);

  CHECK(first_line(tpath) == "t,agent_id,action,command,actual_power,state,cost");
  CHECK(count_lines(tpath) == 1 + 6 * fleet.size());
  CHECK(first_line(vpath) == "t,node,phase,v_mag");
  CHECK(count_lines(vpath) == 1 + 6 * 3 * model.n_buses);

  // Metrics recompute from the exported trace: the per-row costs sum to the
  // episode total.
  std::ifstream in(tpath);
  std::string line;
  std::getline(in, line);  // header
  double total = 0.0;
  while (std::getline(in, line)) {
    total += std::stod(line.substr(line.rfind(',') + 1));
  }
  CHECK(total == doctest::Approx(trace.total_cost).epsilon(1e-12));
}

TEST_CASE("metrics file lists the headline numbers") {
  TempDir dir;
  trainer::EvalMetrics m;
  m.total_cost = 42.0;
  m.day_costs = {20.0, 22.0};
  const std::string path = dir.file("metrics.csv");
  io::write_metrics(m, path);
  CHECK(first_line(path) == "metric,value");
  CHECK(count_lines(path) == 1 + 5 + 2);
}
