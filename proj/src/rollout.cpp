#include "gradmap/rollout.hpp"

#include <cmath>
#include <future>
#include <random>

namespace gradmap::rollout {

const std::array<const char*, 6>& ViolationChannels::names() {
  static const std::array<const char*, 6> n = {"volt", "bstp", "bend",
                                               "hstp", "hend", "grmp"};
  return n;
}

std::uint64_t episode_stream_seed(std::uint64_t seed, int episode_index) {
  // splitmix64 over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (episode_index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

double draw_initial_state(const devices::Agent& agent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  using devices::DeviceType;
  switch (agent.type) {
    case DeviceType::Battery: {
      const auto& b = std::get<devices::BatteryParams>(agent.params);
      return (0.2 + 0.6 * unit(rng)) * b.e_max;
    }
    case DeviceType::HeatPump: {
      const auto& h = std::get<devices::HeatPumpParams>(agent.params);
      return h.theta_set + h.delta * (unit(rng) - 0.5);  // middle half of band
    }
    case DeviceType::Generator: {
      const auto& g = std::get<devices::GeneratorParams>(agent.params);
      return g.p_min + unit(rng) * (g.p_max - g.p_min);
    }
  }
  return 0.0;
}

devices::StepResult device_step(const devices::Agent& agent, double state,
                                double command, double theta_out, double dt) {
  using devices::DeviceType;
  switch (agent.type) {
    case DeviceType::Battery:
      return devices::battery_step(
          state, command, std::get<devices::BatteryParams>(agent.params), dt);
    case DeviceType::HeatPump:
      return devices::heatpump_step(
          state, command, std::get<devices::HeatPumpParams>(agent.params),
          theta_out, dt);
    case DeviceType::Generator:
      return devices::generator_step(
          state, command, std::get<devices::GeneratorParams>(agent.params), dt);
  }
  return {};
}

double reactive_tan(const devices::Agent& agent) {
  return std::tan(std::acos(agent.power_factor));
}

}  // namespace

EpisodeTrace simulate_episode(const policy::PolicySet& policies,
                              const devices::DeviceFleet& fleet,
                              const feeder::NetworkModel& model,
                              const scenario::Scenario& scen, int day,
                              const SimOptions& opts) {
  const int n = fleet.size();
  const int t_horizon = scen.steps_per_day;
  const int dim = model.dim();

  EpisodeTrace trace;
  trace.t_horizon = t_horizon;
  trace.n_agents = n;
  trace.day = day;
  trace.dt = scen.dt;
  trace.steps.resize(t_horizon);
  trace.injections.reserve(t_horizon);
  trace.pf.reserve(t_horizon);
  trace.price_import.resize(t_horizon);
  trace.price_export.resize(t_horizon);
  trace.theta_out.resize(t_horizon);

  std::mt19937_64 rng(episode_stream_seed(opts.noise_seed, day));
  std::normal_distribution<double> gauss(0.0, 1.0);

  trace.initial_states.resize(n);
  for (int a = 0; a < n; ++a) {
    if (opts.initial_states) {
      trace.initial_states[a] = (*opts.initial_states)[a];
    } else if (opts.randomize_initial) {
      trace.initial_states[a] = draw_initial_state(fleet.agents[a], rng);
    } else {
      trace.initial_states[a] = fleet.agents[a].initial_state;
    }
  }
  std::vector<double> state = trace.initial_states;

  for (int t = 1; t <= t_horizon; ++t) {
    auto& recs = trace.steps[t - 1];
    recs.resize(n);
    const int k = scen.step_index(day, t);
    const double price_imp = scen.price_import(k);
    const double price_exp = scen.price_export(k);
    const double theta_out = scen.temp_out(k);
    trace.price_import(t - 1) = price_imp;
    trace.price_export(t - 1) = price_exp;
    trace.theta_out(t - 1) = theta_out;

    feeder::Injection inj = feeder::Injection::zero(dim);

    for (int a = 0; a < n; ++a) {
      const auto& agent = fleet.agents[a];
      auto& rec = recs[a];
      rec.state_before = state[a];

      double v_local = 1.0;
      if (t > 1 && trace.pf[t - 2].converged) {
        v_local = std::abs(
            trace.pf[t - 2].v(model.node_phase(agent.bus, agent.phase)));
      }
      rec.obs = policy::build_observation(
          agent, state[a], t, t_horizon, scen.net_demand(a, day, t), price_imp,
          price_exp, theta_out, v_local, scen.stats);

      const double eps = opts.deterministic ? 0.0 : gauss(rng);
      rec.epsilon = eps;

      if (opts.rule && *opts.rule) {
        rec.command = (*opts.rule)(agent, t, state[a], theta_out);
        rec.mu_old = 0.0;
        rec.sigma_old = 1.0;
      } else {
        const auto out = policy::policy_forward(policies.agents[a], rec.obs);
        rec.mu_old = out.mu;
        rec.sigma_old = out.sigma;
        auto [a_raw, a_clipped] = policy::sample_action(out, eps);
        if (a == opts.bump_agent && t == opts.bump_t) {
          a_raw += opts.bump_delta;
          a_clipped = clip(a_raw, -1.0, 1.0);
        }
        rec.a_raw = a_raw;
        rec.a_clipped = a_clipped;
        rec.command = policy::decode_action(a_clipped, agent);
      }

      rec.step = device_step(agent, state[a], rec.command, theta_out, scen.dt);
      state[a] = rec.step.next_state;

      rec.net_power_kw = scen.load(a, k) - scen.pv(a, k) +
                         agent.net_sign() * rec.step.actual_power;
      rec.meter_cost =
          devices::meter_cost(rec.net_power_kw, price_imp, price_exp, scen.dt);
      trace.total_cost += rec.step.cost + rec.meter_cost;

      const int np = model.node_phase(agent.bus, agent.phase);
      inj.s_wye(np) -= rec.net_power_kw *
                       Complex(1.0, reactive_tan(agent)) / model.s_base_kw;
    }

    const VecC* warm = nullptr;
    if (opts.warm_start && t > 1 && trace.pf[t - 2].converged) {
      warm = &trace.pf[t - 2].v;
    }
    trace.injections.push_back(inj);
    trace.pf.push_back(
        feeder::solve_power_flow(inj, model, warm, opts.pf_tol, opts.pf_max_iter));
    if (!trace.pf.back().converged) {
      trace.ok = false;
      ++trace.pf_failures;
    }
  }
  trace.final_states = state;

  // Per-step channels. The per-device raws already carry the per-device
  // normaliser, so the channel is the raw sum divided by T.
  auto& ch = trace.channels;
  for (int t = 0; t < t_horizon; ++t) {
    for (int a = 0; a < n; ++a) {
      const double raw = trace.steps[t][a].step.violation_raw;
      switch (fleet.agents[a].type) {
        case devices::DeviceType::Battery:
          ch.bstp += raw;
          break;
        case devices::DeviceType::HeatPump:
          ch.hstp += raw;
          break;
        case devices::DeviceType::Generator:
          ch.grmp += raw;
          break;
      }
    }
  }
  ch.bstp /= t_horizon;
  ch.hstp /= t_horizon;
  ch.grmp /= t_horizon;

  for (int a = 0; a < n; ++a) {
    const auto& agent = fleet.agents[a];
    if (agent.type == devices::DeviceType::Battery) {
      const auto& b = std::get<devices::BatteryParams>(agent.params);
      ch.bend += pos(b.e_target - state[a]) / b.e_target;
    } else if (agent.type == devices::DeviceType::HeatPump) {
      const auto& h = std::get<devices::HeatPumpParams>(agent.params);
      ch.hend += pos(h.theta_target - state[a]) / h.delta;
    }
  }

  ch.volt = feeder::voltage_violation(trace.pf, model, n);
  return trace;
}

double lagrangian(const EpisodeTrace& trace, const DualState& duals,
                  const devices::DeviceFleet& fleet, const RolloutConfig& cfg) {
  const double coef = cfg.m_cost / fleet.mean_p_max();
  const auto ch = trace.channels.as_array();
  const auto lam = duals.as_array();
  double l = coef * trace.total_cost;
  for (int r = 0; r < 6; ++r) l += lam[r] * ch[r];
  return l;
}

BackwardDiagnostics backward_rollout(EpisodeTrace& trace,
                                     const DualState& duals,
                                     const policy::PolicySet& policies,
                                     const devices::DeviceFleet& fleet,
                                     const feeder::NetworkModel& model,
                                     const RolloutConfig& cfg) {
  BackwardDiagnostics diag;
  const int n = trace.n_agents;
  const int t_horizon = trace.t_horizon;
  const int dim = model.dim();
  const double coef = cfg.m_cost / fleet.mean_p_max();
  const double volt_denom = 0.5 * (model.v_max - model.v_min) *
                            static_cast<double>(t_horizon) / static_cast<double>(n);

  // Terminal-channel seeds for the state adjoints.
  std::vector<double> g_state(n, 0.0);
  for (int a = 0; a < n; ++a) {
    const auto& agent = fleet.agents[a];
    const double xT = trace.final_states[a];
    if (agent.type == devices::DeviceType::Battery) {
      const auto& b = std::get<devices::BatteryParams>(agent.params);
      g_state[a] = -duals.bend * pos_grad(b.e_target - xT) / b.e_target;
    } else if (agent.type == devices::DeviceType::HeatPump) {
      const auto& h = std::get<devices::HeatPumpParams>(agent.params);
      g_state[a] = -duals.hend * pos_grad(h.theta_target - xT) / h.delta;
    }
  }

  // Adjoint of the step-t voltage solution from its use in step-(t+1)
  // observations, filled while processing step t+1.
  VecR pending_gv = VecR::Zero(2 * dim);

  for (int t = t_horizon; t >= 1; --t) {
    auto& recs = trace.steps[t - 1];
    const auto& pf = trace.pf[t - 1];

    // Network adjoint: voltage-channel contribution plus the deferred
    // observation-feedback contribution.
    VecR g_v = pending_gv;
    bool have_gv = g_v.squaredNorm() > 0.0;
    if (duals.volt != 0.0 && pf.converged) {
      VecR g_viol;
      const double viol = feeder::voltage_violation_step(pf.v, model, &g_viol);
      if (viol > 0.0) {
        g_v += g_viol * (duals.volt / volt_denom);
        have_gv = true;
      }
    }
    VecR sens = VecR::Zero(2 * dim);
    if (have_gv && pf.converged) {
      const auto sr = feeder::voltage_sensitivity(
          pf, trace.injections[t - 1], model, g_v, cfg.sensitivity);
      if (sr.converged && sr.grad_wye.allFinite()) {
        sens = sr.grad_wye;
      } else {
        ++diag.sensitivity_failures;  // NaN/failed solves contribute zero
      }
    }
    pending_gv.setZero();

    const double price_imp = trace.price_import(t - 1);
    const double price_exp = trace.price_export(t - 1);
    const double theta_out = trace.theta_out(t - 1);

    for (int a = 0; a < n; ++a) {
      const auto& agent = fleet.agents[a];
      auto& rec = recs[a];

      double g_pnet = coef * devices::meter_cost_grad(rec.net_power_kw,
                                                      price_imp, price_exp,
                                                      trace.dt);
      const int np = model.node_phase(agent.bus, agent.phase);
      const double tanphi = std::tan(std::acos(agent.power_factor));
      g_pnet += -(sens(np) + sens(dim + np) * tanphi) / model.s_base_kw;

      devices::UpstreamAdjoint up;
      up.d_next_state = g_state[a];
      up.d_actual_power = g_pnet * agent.net_sign();
      up.d_cost = coef;
      switch (agent.type) {
        case devices::DeviceType::Battery:
          up.d_violation_raw = duals.bstp / t_horizon;
          break;
        case devices::DeviceType::HeatPump:
          up.d_violation_raw = duals.hstp / t_horizon;
          break;
        case devices::DeviceType::Generator:
          up.d_violation_raw = duals.grmp / t_horizon;
          break;
      }

      devices::StepAdjoint adj;
      const double state = rec.state_before;
      switch (agent.type) {
        case devices::DeviceType::Battery:
          adj = devices::battery_step_backward(
              state, rec.command, std::get<devices::BatteryParams>(agent.params),
              trace.dt, up);
          break;
        case devices::DeviceType::HeatPump:
          adj = devices::heatpump_step_backward(
              state, rec.command,
              std::get<devices::HeatPumpParams>(agent.params), theta_out,
              trace.dt, up);
          break;
        case devices::DeviceType::Generator:
          adj = devices::generator_step_backward(
              state, rec.command,
              std::get<devices::GeneratorParams>(agent.params), trace.dt, up);
          break;
      }
      g_state[a] = adj.d_state;

      const double g_a = adj.d_command * policy::decode_action_grad(agent) *
                         clip_grad(rec.a_raw, -1.0, 1.0);
      rec.g_a = g_a;
      const auto [g_mu, g_sigma] = policy::output_gradients(g_a, rec.epsilon);
      rec.g_mu = g_mu;
      rec.g_sigma = g_sigma;

      // Closed-loop feedback: this step's action reacts to the state before
      // the step and to the previous step's voltages through its observation.
      if (g_a != 0.0) {
        const double t_bar =
            static_cast<double>(t) / static_cast<double>(t_horizon);
        const policy::Observation dobs = policy::action_obs_gradient(
            policies.agents[a], rec.obs, rec.epsilon);
        const auto sg =
            policy::obs_state_gradient(agent, rec.state_before, t_bar);
        g_state[a] +=
            g_a * (dobs(1) * sg.d_state_norm + dobs(6) * sg.d_urgency);

        if (t > 1 && trace.pf[t - 2].converged) {
          const Complex v_loc = trace.pf[t - 2].v(np);
          const double v_mag = std::abs(v_loc);
          const double d_feat =
              clip_grad((v_mag - 0.9) / 0.2, 0.0, 1.0) / 0.2;
          if (d_feat != 0.0 && v_mag > 0.0) {
            const double c = g_a * dobs(7) * d_feat / v_mag;
            pending_gv(np) += c * v_loc.real();
            pending_gv(dim + np) += c * v_loc.imag();
          }
        }
      }
    }
  }
  return diag;
}

RolloutBatch simulate_batch(const policy::PolicySet& policies,
                            const devices::DeviceFleet& fleet,
                            const feeder::NetworkModel& model,
                            const scenario::Scenario& scen, int batch_size,
                            std::uint64_t seed, bool with_gradients,
                            const DualState& duals, const RolloutConfig& cfg,
                            int workers) {
  RolloutBatch batch;
  batch.with_gradients = with_gradients;
  batch.episodes.resize(batch_size);

  std::mt19937_64 day_rng(episode_stream_seed(seed, -1));
  std::uniform_int_distribution<int> day_dist(0, scen.train_days - 1);
  std::vector<int> days(batch_size);
  for (int k = 0; k < batch_size; ++k) days[k] = day_dist(day_rng);

  auto run_one = [&](int k) {
    SimOptions opts;
    opts.randomize_initial = true;
    opts.noise_seed = episode_stream_seed(seed, k);
    EpisodeTrace tr =
        simulate_episode(policies, fleet, model, scen, days[k], opts);
    int sens_failures = 0;
    if (with_gradients && tr.ok) {
      sens_failures = backward_rollout(tr, duals, policies, fleet, model, cfg)
                          .sensitivity_failures;
    }
    return std::make_pair(std::move(tr), sens_failures);
  };

  if (workers > 1) {
    std::vector<std::future<std::pair<EpisodeTrace, int>>> futures;
    futures.reserve(batch_size);
    for (int k = 0; k < batch_size; ++k) {
      futures.push_back(std::async(std::launch::async, run_one, k));
    }
    for (int k = 0; k < batch_size; ++k) {  // fixed reduction order
      auto [tr, f] = futures[k].get();
      batch.sensitivity_failures += f;
      batch.episodes[k] = std::move(tr);
    }
  } else {
    for (int k = 0; k < batch_size; ++k) {
      auto [tr, f] = run_one(k);
      batch.sensitivity_failures += f;
      batch.episodes[k] = std::move(tr);
    }
  }

  int ok_count = 0;
  for (const auto& tr : batch.episodes) {
    if (!tr.ok) {
      ++batch.n_failed;
      continue;
    }
    ++ok_count;
    const auto ch = tr.channels.as_array();
    batch.mean_channels.volt += ch[0];
    batch.mean_channels.bstp += ch[1];
    batch.mean_channels.bend += ch[2];
    batch.mean_channels.hstp += ch[3];
    batch.mean_channels.hend += ch[4];
    batch.mean_channels.grmp += ch[5];
    batch.mean_cost += tr.total_cost;
  }
  if (ok_count == 0) {
    throw std::runtime_error("all episodes failed power flow");
  }
  const double inv = 1.0 / ok_count;
  batch.mean_channels.volt *= inv;
  batch.mean_channels.bstp *= inv;
  batch.mean_channels.bend *= inv;
  batch.mean_channels.hstp *= inv;
  batch.mean_channels.hend *= inv;
  batch.mean_channels.grmp *= inv;
  batch.mean_cost *= inv;
  return batch;
}

}  // namespace gradmap::rollout
