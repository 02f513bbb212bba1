#include <stdexcept>
#include "gradmap/io.hpp"

#include <fstream>
#include <iomanip>

#include <json.hpp>

namespace gradmap::io {

using nlohmann::json;

namespace {

json open_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  json j;
  in >> j;
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

int parse_phase(const json& j) {
  if (j.is_number_integer()) return j.get<int>();
  const std::string s = j.get<std::string>();
  if (s == "a") return 0;
  if (s == "b") return 1;
  if (s == "c") return 2;
  throw std::invalid_argument("bad phase: " + s);
}

std::string phase_name(int p) { return std::string(1, "abc"[p]); }

}  // namespace

devices::DeviceFleet load_fleet(const std::string& path) {
  const json j = open_json(path);
  devices::DeviceFleet fleet;
  for (const auto& a : j.at("agents")) {
    devices::Agent agent;
    agent.id = a.at("id").get<std::string>();
    agent.bus = a.at("bus").get<std::string>();
    agent.phase = parse_phase(a.at("phase"));
    agent.power_factor = a.value("power_factor", 0.95);
    const std::string type = a.at("type").get<std::string>();
    const json& p = a.at("params");
    if (type == "battery") {
      agent.type = devices::DeviceType::Battery;
      devices::BatteryParams b;
      b.e_max = p.at("e_max").get<double>();
      b.p_max = p.at("p_max").get<double>();
      b.e_target = p.at("e_target").get<double>();
      b.c_deg = p.value("c_deg", 0.01);
      b.eff_a = p.value("eff_a", 0.95);
      b.eff_b = p.value("eff_b", 0.10);
      b.eff_c = p.value("eff_c", 6.0);
      agent.params = b;
      agent.initial_state = a.value("initial_state", 0.5 * b.e_max);
    } else if (type == "heatpump") {
      agent.type = devices::DeviceType::HeatPump;
      devices::HeatPumpParams h;
      h.r = p.at("r").get<double>();
      h.c = p.at("c").get<double>();
      h.cop = p.at("cop").get<double>();
      h.p_max = p.at("p_max").get<double>();
      h.theta_set = p.at("theta_set").get<double>();
      h.delta = p.at("delta").get<double>();
      h.theta_target = p.value("theta_target", h.theta_set);
      h.c_use = p.value("c_use", 0.005);
      agent.params = h;
      agent.initial_state = a.value("initial_state", h.theta_set);
    } else if (type == "generator") {
      agent.type = devices::DeviceType::Generator;
      devices::GeneratorParams g;
      g.p_min = p.at("p_min").get<double>();
      g.p_max = p.at("p_max").get<double>();
      g.ramp_dn = p.at("ramp_dn").get<double>();
      g.ramp_up = p.at("ramp_up").get<double>();
      g.fuel_a = p.value("fuel_a", 0.08);
      g.fuel_b = p.value("fuel_b", 0.005);
      agent.params = g;
      agent.initial_state = a.value("initial_state", 0.5 * (g.p_min + g.p_max));
    } else {
      throw std::invalid_argument("unknown device type: " + type);
    }
    fleet.agents.push_back(std::move(agent));
  }
  if (fleet.agents.empty()) throw std::invalid_argument("empty fleet: " + path);
  return fleet;
}

void save_fleet(const devices::DeviceFleet& fleet, const std::string& path) {
  json agents = json::array();
  for (const auto& a : fleet.agents) {
    json ja;
    ja["id"] = a.id;
    ja["bus"] = a.bus;
    ja["phase"] = phase_name(a.phase);
    ja["power_factor"] = a.power_factor;
    ja["initial_state"] = a.initial_state;
    json p;
    switch (a.type) {
      case devices::DeviceType::Battery: {
        const auto& b = std::get<devices::BatteryParams>(a.params);
        ja["type"] = "battery";
        p = {{"e_max", b.e_max},       {"p_max", b.p_max},
             {"e_target", b.e_target}, {"c_deg", b.c_deg},
             {"eff_a", b.eff_a},       {"eff_b", b.eff_b},
             {"eff_c", b.eff_c}};
        break;
      }
      case devices::DeviceType::HeatPump: {
        const auto& h = std::get<devices::HeatPumpParams>(a.params);
        ja["type"] = "heatpump";
        p = {{"r", h.r},
             {"c", h.c},
             {"cop", h.cop},
             {"p_max", h.p_max},
             {"theta_set", h.theta_set},
             {"delta", h.delta},
             {"theta_target", h.theta_target},
             {"c_use", h.c_use}};
        break;
      }
      case devices::DeviceType::Generator: {
        const auto& g = std::get<devices::GeneratorParams>(a.params);
        ja["type"] = "generator";
        p = {{"p_min", g.p_min},   {"p_max", g.p_max},
             {"ramp_dn", g.ramp_dn}, {"ramp_up", g.ramp_up},
             {"fuel_a", g.fuel_a}, {"fuel_b", g.fuel_b}};
        break;
      }
    }
    ja["params"] = p;
    agents.push_back(ja);
  }
  write_json({{"agents", agents}}, path);
}

namespace {
json vec_to_json(const VecR& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}
VecR json_to_vec(const json& j) {
  VecR v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}
json mat_to_json(const MatR& m) {
  json j = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}
MatR json_to_mat(const json& j) {
  MatR m(j.size(), j[0].size());
  for (size_t r = 0; r < j.size(); ++r)
    for (size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
  return m;
}
}  // namespace

scenario::Scenario load_scenario(const std::string& path) {
  const json j = open_json(path);
  scenario::Scenario s;
  s.dt = j.at("dt").get<double>();
  s.steps_per_day = j.at("steps_per_day").get<int>();
  s.n_days = j.at("n_days").get<int>();
  s.n_agents = j.at("n_agents").get<int>();
  s.train_days = j.at("train_days").get<int>();
  s.test_days = j.at("test_days").get<int>();
  s.load = json_to_mat(j.at("load"));
  s.pv = json_to_mat(j.at("pv"));
  s.temp_out = json_to_vec(j.at("temp_out"));
  s.price_import = json_to_vec(j.at("price_import"));
  s.price_export = json_to_vec(j.at("price_export"));
  const json& st = j.at("stats");
  s.stats.demand_min = st.at("demand_min").get<double>();
  s.stats.demand_max = st.at("demand_max").get<double>();
  s.stats.price_imp_min = st.at("price_imp_min").get<double>();
  s.stats.price_imp_max = st.at("price_imp_max").get<double>();
  s.stats.price_exp_min = st.at("price_exp_min").get<double>();
  s.stats.price_exp_max = st.at("price_exp_max").get<double>();
  s.stats.temp_min = st.at("temp_min").get<double>();
  s.stats.temp_max = st.at("temp_max").get<double>();
  return s;
}

void save_scenario(const scenario::Scenario& s, const std::string& path) {
  json j;
  j["dt"] = s.dt;
  j["steps_per_day"] = s.steps_per_day;
  j["n_days"] = s.n_days;
  j["n_agents"] = s.n_agents;
  j["train_days"] = s.train_days;
  j["test_days"] = s.test_days;
  j["load"] = mat_to_json(s.load);
  j["pv"] = mat_to_json(s.pv);
  j["temp_out"] = vec_to_json(s.temp_out);
  j["price_import"] = vec_to_json(s.price_import);
  j["price_export"] = vec_to_json(s.price_export);
  j["stats"] = {{"demand_min", s.stats.demand_min},
                {"demand_max", s.stats.demand_max},
                {"price_imp_min", s.stats.price_imp_min},
                {"price_imp_max", s.stats.price_imp_max},
                {"price_exp_min", s.stats.price_exp_min},
                {"price_exp_max", s.stats.price_exp_max},
                {"temp_min", s.stats.temp_min},
                {"temp_max", s.stats.temp_max}};
  write_json(j, path);
}

void save_checkpoint(const policy::PolicySet& policies,
                     const devices::DeviceFleet& fleet,
                     const std::string& path) {
  json agents;
  for (int a = 0; a < policies.size(); ++a) {
    agents[fleet.agents[a].id] = vec_to_json(policies.agents[a].flatten());
  }
  write_json({{"layout_version", 1}, {"agents", agents}}, path);
}

policy::PolicySet load_checkpoint(const std::string& path,
                                  const devices::DeviceFleet& fleet) {
  const json j = open_json(path);
  if (j.at("layout_version").get<int>() != 1) {
    throw std::invalid_argument("unsupported checkpoint layout version");
  }
  policy::PolicySet set;
  for (const auto& agent : fleet.agents) {
    const auto& arr = j.at("agents").at(agent.id);
    set.agents.push_back(policy::PolicyParams::from_flat(json_to_vec(arr)));
  }
  return set;
}

void write_training_log(const std::vector<trainer::LogRow>& log,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << "dual_step,primal_step,mean_cost,volt,bstp,bend,hstp,hend,grmp,"
         "lambda_volt,lambda_bstp,lambda_bend,lambda_hstp,lambda_hend,"
         "lambda_grmp,beta,trust,pf_failed_episodes,sensitivity_failures,"
         "backward_calls\n";
  out << std::setprecision(17);
  for (const auto& r : log) {
    out << r.dual_step << ',' << r.primal_step << ',' << r.mean_cost;
    for (double c : r.channels.as_array()) out << ',' << c;
    for (double l : r.duals.as_array()) out << ',' << l;
    out << ',' << r.beta << ',' << r.trust << ',' << r.pf_failed_episodes
        << ',' << r.sensitivity_failures << ',' << r.backward_calls << '\n';
  }
}

void write_metrics(const trainer::EvalMetrics& metrics,
                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << std::setprecision(17);
  out << "metric,value\n";
  out << "total_cost," << metrics.total_cost << '\n';
  out << "mean_volt_channel," << metrics.mean_volt << '\n';
  out << "mean_bend_channel," << metrics.mean_bend << '\n';
  out << "mean_hend_channel," << metrics.mean_hend << '\n';
  out << "max_volt_violation_pu," << metrics.max_volt_violation_pu << '\n';
  for (size_t d = 0; d < metrics.day_costs.size(); ++d) {
    out << "day_cost_" << d << ',' << metrics.day_costs[d] << '\n';
  }
}

void export_trace(const rollout::EpisodeTrace& trace,
                  const devices::DeviceFleet& fleet,
                  const feeder::NetworkModel& model,
                  const std::string& trace_path,
                  const std::string& voltage_path) {
  std::ofstream out(trace_path);
  if (!out) throw std::invalid_argument("cannot write file: " + trace_path);
  out << std::setprecision(17);
  out << "t,agent_id,action,command,actual_power,state,cost\n";
  for (int t = 1; t <= trace.t_horizon; ++t) {
    for (int a = 0; a < trace.n_agents; ++a) {
      const auto& rec = trace.steps[t - 1][a];
      out << t << ',' << fleet.agents[a].id << ',' << rec.a_clipped << ','
          << rec.command << ',' << rec.step.actual_power << ','
          << rec.step.next_state << ',' << (rec.step.cost + rec.meter_cost)
          << '\n';
    }
  }

  std::ofstream vout(voltage_path);
  if (!vout) throw std::invalid_argument("cannot write file: " + voltage_path);
  vout << std::setprecision(17);
  vout << "t,node,phase,v_mag\n";
  for (int t = 1; t <= trace.t_horizon; ++t) {
    const auto& pf = trace.pf[t - 1];
    for (int b = 0; b < model.n_buses; ++b) {
      for (int p = 0; p < 3; ++p) {
        vout << t << ',' << model.bus_ids[b] << ',' << phase_name(p) << ','
             << std::abs(pf.v(3 * b + p)) << '\n';
      }
    }
  }
}

}  // namespace gradmap::io
