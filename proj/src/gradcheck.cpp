#include "gradmap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "gradmap/trainer.hpp"

namespace gradmap::gradcheck {

namespace {

double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-6});
  return std::abs(got - want) / denom;
}

}  // namespace

devices::DeviceFleet desk_fleet(const feeder::NetworkModel& model, int n_bat,
                                int n_hp, int n_gen, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5eed5eed5eedULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  devices::DeviceFleet fleet;
  const int total = n_bat + n_hp + n_gen;
  const int n_buses = model.n_buses;
  for (int i = 0; i < total; ++i) {
    devices::Agent a;
    a.bus = model.bus_ids[i % n_buses];
    a.phase = (i / n_buses) % 3;
    if (i < n_bat) {
      a.id = "bat" + std::to_string(i + 1);
      a.type = devices::DeviceType::Battery;
      devices::BatteryParams p;
      p.e_max = uni(8.0, 12.0);
      p.p_max = uni(3.0, 5.0);
      p.e_target = 0.5 * p.e_max;
      p.c_deg = 0.01;
      p.eff_a = uni(0.93, 0.97);
      p.eff_b = uni(0.05, 0.15);
      p.eff_c = uni(4.0, 8.0);
      a.params = p;
      a.initial_state = 0.5 * p.e_max;
    } else if (i < n_bat + n_hp) {
      a.id = "hp" + std::to_string(i - n_bat + 1);
      a.type = devices::DeviceType::HeatPump;
      devices::HeatPumpParams p;
      p.r = uni(2.5, 3.5);
      p.c = uni(3.0, 5.0);
      p.cop = uni(2.8, 3.5);
      p.p_max = uni(3.0, 5.0);
      p.theta_set = 20.0;
      p.delta = 2.0;
      p.theta_target = 18.5;
      p.c_use = 0.005;
      a.params = p;
      a.initial_state = 20.0;
    } else {
      a.id = "gen" + std::to_string(i - n_bat - n_hp + 1);
      a.type = devices::DeviceType::Generator;
      devices::GeneratorParams p;
      p.p_min = 0.0;
      p.p_max = uni(6.0, 10.0);
      p.ramp_up = 0.25 * p.p_max;
      p.ramp_dn = -0.25 * p.p_max;
      p.fuel_a = uni(0.10, 0.14);
      p.fuel_b = 0.005;
      a.params = p;
      a.initial_state = 0.5 * p.p_max;
    }
    fleet.agents.push_back(std::move(a));
  }
  return fleet;
}

devices::DeviceFleet volt_stress_fleet(const feeder::NetworkModel& model,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x70175717ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  devices::DeviceFleet fleet;
  // Two batteries and two heat pumps near the head keep all six channels in
  // play; six cheap generators at the tail make exporting hard.
  const char* buses[10] = {"b1", "b1", "b1", "b2", "b2", "b2",
                           "b3", "b3", "b3", "b3"};
  for (int i = 0; i < 10; ++i) {
    devices::Agent a;
    a.bus = buses[i];
    a.phase = i % 3;
    if (i < 2) {
      a.id = "bat" + std::to_string(i + 1);
      a.type = devices::DeviceType::Battery;
      devices::BatteryParams p;
      p.e_max = uni(8.0, 12.0);
      p.p_max = uni(3.0, 5.0);
      p.e_target = 0.5 * p.e_max;
      a.params = p;
      a.initial_state = 0.5 * p.e_max;
    } else if (i < 4) {
      a.id = "hp" + std::to_string(i - 1);
      a.type = devices::DeviceType::HeatPump;
      devices::HeatPumpParams p;
      p.r = uni(2.5, 3.5);
      p.c = uni(3.0, 5.0);
      p.cop = uni(2.8, 3.5);
      p.p_max = uni(3.0, 5.0);
      p.theta_target = 18.5;
      a.params = p;
      a.initial_state = 20.0;
    } else {
      a.id = "gen" + std::to_string(i - 3);
      a.type = devices::DeviceType::Generator;
      devices::GeneratorParams p;
      p.p_min = 0.0;
      p.p_max = uni(14.0, 18.0);
      p.ramp_up = 0.5 * p.p_max;
      p.ramp_dn = -0.5 * p.p_max;
      p.fuel_a = 0.02;  // well below the export price: exporting pays
      p.fuel_b = 0.001;
      a.params = p;
      a.initial_state = 0.5 * p.p_max;
    }
    fleet.agents.push_back(std::move(a));
  }
  return fleet;
}

feeder::Injection violating_injection(const feeder::NetworkModel& model,
                                      double scale) {
  auto inj = feeder::Injection::zero(model.dim());
  const double tanphi = std::tan(std::acos(0.95));
  // Heavier generation further down the feeder lifts the tail voltages; the
  // per-phase skew keeps the worst node-phase unique so the violation's
  // argmax is stable under small perturbations.
  const double phase_w[3] = {1.2, 1.0, 0.8};
  for (int k = 0; k < model.dim(); ++k) {
    const double w = (0.5 + static_cast<double>(k / 3) /
                                std::max(1, model.n_buses - 1)) *
                     phase_w[k % 3];
    inj.s_wye(k) = scale * w * Complex(1.0, tanphi);
  }
  return inj;
}

CheckReport check_voltage_sensitivity(const feeder::NetworkModel& model,
                                      std::uint64_t seed, int n_directions,
                                      double h) {
  CheckReport rep;
  const int dim = model.dim();
  const auto inj = violating_injection(model);
  const auto base = feeder::solve_power_flow(inj, model, nullptr, 1e-13, 500);
  if (!base.converged) {
    rep.max_rel_err = 1.0;
    return rep;
  }
  VecR g_v;
  feeder::voltage_violation_step(base.v, model, &g_v);
  const auto sr = feeder::voltage_sensitivity(base, inj, model, g_v);
  if (!sr.converged) {
    rep.max_rel_err = 1.0;
    return rep;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int d = 0; d < n_directions; ++d) {
    VecR dir(2 * dim);
    for (int k = 0; k < 2 * dim; ++k) dir(k) = gauss(rng);
    dir /= dir.norm();

    auto eval = [&](double sign) {
      auto pert = inj;
      for (int k = 0; k < dim; ++k) {
        pert.s_wye(k) += sign * h * Complex(dir(k), dir(dim + k));
      }
      const auto sol =
          feeder::solve_power_flow(pert, model, &base.v, 1e-13, 500);
      return sol.converged
                 ? feeder::voltage_violation_step(sol.v, model)
                 : std::numeric_limits<double>::quiet_NaN();
    };
    const double vp = eval(1.0);
    const double vm = eval(-1.0);
    if (!std::isfinite(vp) || !std::isfinite(vm)) {
      ++rep.n_skipped;
      continue;
    }
    const double fd = (vp - vm) / (2.0 * h);
    const double analytic = sr.grad_wye.dot(dir);
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic, fd));
    ++rep.n_checked;
  }
  return rep;
}

CheckReport check_device_backward(std::uint64_t seed, int n_trials, double h) {
  CheckReport rep;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  for (int trial = 0; trial < n_trials; ++trial) {
    const int kind = trial % 3;
    const double dt = trial % 2 == 0 ? 1.0 : 0.5;
    const double u0 = uni(-1.0, 1.0), u1 = uni(-1.0, 1.0), u2 = uni(-1.0, 1.0),
                 u3 = uni(-1.0, 1.0);
    devices::UpstreamAdjoint up{u0, u1, u2, u3};

    double state = 0.0, cmd = 0.0;
    std::function<double(double, double)> value;
    devices::StepAdjoint adj;
    if (kind == 0) {
      devices::BatteryParams p;
      p.e_max = uni(8.0, 12.0);
      p.p_max = uni(3.0, 5.0);
      p.eff_a = uni(0.93, 0.97);
      p.eff_b = uni(0.05, 0.15);
      p.eff_c = uni(4.0, 8.0);
      state = uni(-0.2, 1.2) * p.e_max;  // include limit-crossing regions
      cmd = uni(-1.0, 1.0) * p.p_max;
      value = [p, dt, u0, u1, u2, u3](double x, double c) {
        const auto r = devices::battery_step(x, c, p, dt);
        return u0 * r.next_state + u1 * r.actual_power + u2 * r.cost +
               u3 * r.violation_raw;
      };
      adj = devices::battery_step_backward(state, cmd, p, dt, up);
    } else if (kind == 1) {
      devices::HeatPumpParams p;
      p.r = uni(1.5, 2.5);
      p.c = uni(3.0, 5.0);
      p.cop = uni(2.5, 3.5);
      p.p_max = uni(2.0, 4.0);
      state = uni(17.0, 23.0);
      cmd = uni(0.0, p.p_max);
      const double theta_out = uni(-5.0, 15.0);
      value = [p, dt, theta_out, u0, u1, u2, u3](double x, double c) {
        const auto r = devices::heatpump_step(x, c, p, theta_out, dt);
        return u0 * r.next_state + u1 * r.actual_power + u2 * r.cost +
               u3 * r.violation_raw;
      };
      adj = devices::heatpump_step_backward(state, cmd, p, theta_out, dt, up);
    } else {
      devices::GeneratorParams p;
      p.p_max = uni(6.0, 10.0);
      p.ramp_up = 0.25 * p.p_max;
      p.ramp_dn = -0.25 * p.p_max;
      p.fuel_a = uni(0.10, 0.14);
      state = uni(0.0, p.p_max);
      cmd = uni(0.0, p.p_max);
      value = [p, dt, u0, u1, u2, u3](double x, double c) {
        const auto r = devices::generator_step(x, c, p, dt);
        return u0 * r.next_state + u1 * r.actual_power + u2 * r.cost +
               u3 * r.violation_raw;
      };
      adj = devices::generator_step_backward(state, cmd, p, dt, up);
    }

    // A kink strictly inside the probe interval shows up as disagreement
    // between the one-sided slopes; skip those points.
    auto fd_pair = [&](bool wrt_cmd) {
      const double f0 = value(state, cmd);
      const double fp = wrt_cmd ? value(state, cmd + h) : value(state + h, cmd);
      const double fm = wrt_cmd ? value(state, cmd - h) : value(state - h, cmd);
      const double fwd = (fp - f0) / h;
      const double bwd = (f0 - fm) / h;
      const double ctr = (fp - fm) / (2.0 * h);
      const bool kinked =
          std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(ctr));
      return std::make_pair(ctr, kinked);
    };

    const auto [fd_cmd, kink_cmd] = fd_pair(true);
    const auto [fd_state, kink_state] = fd_pair(false);
    if (kink_cmd || kink_state) {
      ++rep.n_skipped;
      continue;
    }
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(adj.d_command, fd_cmd));
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(adj.d_state, fd_state));
    ++rep.n_checked;
  }
  return rep;
}

CheckReport check_rollout_gradient(const feeder::NetworkModel& model,
                                   std::uint64_t seed, int n_coords, double h) {
  CheckReport rep;
  const auto fleet = desk_fleet(model, 1, 1, 1, seed);
  const auto scen = scenario::generate_synthetic(seed, fleet.size(), 2, 1.0, 8);
  const auto policies = policy::PolicySet::init(fleet.size(), seed);

  rollout::DualState duals;
  duals.volt = 40.0;
  duals.bstp = 15.0;
  duals.bend = 25.0;
  duals.hstp = 15.0;
  duals.hend = 25.0;
  duals.grmp = 15.0;
  rollout::RolloutConfig cfg;

  rollout::SimOptions opts;
  opts.noise_seed = seed;
  opts.randomize_initial = true;
  opts.pf_tol = 1e-13;
  opts.pf_max_iter = 500;

  auto trace = rollout::simulate_episode(policies, fleet, model, scen, 0, opts);
  if (!trace.ok) {
    rep.max_rel_err = 1.0;
    return rep;
  }
  rollout::backward_rollout(trace, duals, policies, fleet, model, cfg);
  const double l0 = rollout::lagrangian(trace, duals, fleet, cfg);

  auto bumped_l = [&](int agent, int t, double delta) {
    auto o = opts;
    o.bump_agent = agent;
    o.bump_t = t;
    o.bump_delta = delta;
    const auto tr =
        rollout::simulate_episode(policies, fleet, model, scen, 0, o);
    return tr.ok ? rollout::lagrangian(tr, duals, fleet, cfg)
                 : std::numeric_limits<double>::quiet_NaN();
  };

  std::mt19937_64 rng(seed ^ 0xabcdef12ULL);
  std::uniform_int_distribution<int> pick_t(1, trace.t_horizon);
  std::uniform_int_distribution<int> pick_a(0, fleet.size() - 1);

  for (int k = 0; k < n_coords; ++k) {
    const int t = pick_t(rng);
    const int a = pick_a(rng);
    const auto& rec = trace.steps[t - 1][a];
    if (std::abs(std::abs(rec.a_raw) - 1.0) < 1e-3) {
      ++rep.n_skipped;  // action-clip kink
      continue;
    }
    const double lp = bumped_l(a, t, h);
    const double lm = bumped_l(a, t, -h);
    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      ++rep.n_skipped;
      continue;
    }
    const double fd = (lp - lm) / (2.0 * h);
    const double fwd = (lp - l0) / h;
    const double bwd = (l0 - lm) / h;
    if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(fd))) {
      ++rep.n_skipped;  // a device/meter kink sits inside the probe interval
      continue;
    }
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(rec.g_a, fd));
    ++rep.n_checked;
  }
  return rep;
}

CheckReport check_surrogate_tangency(const feeder::NetworkModel& model,
                                     std::uint64_t seed) {
  CheckReport rep;
  const auto fleet = desk_fleet(model, 1, 1, 1, seed);
  const auto scen = scenario::generate_synthetic(seed, fleet.size(), 2, 1.0, 8);
  const auto policies = policy::PolicySet::init(fleet.size(), seed);

  rollout::DualState duals;
  duals.volt = 40.0;
  duals.bstp = 10.0;
  duals.bend = 20.0;
  duals.hstp = 10.0;
  duals.hend = 20.0;
  duals.grmp = 10.0;
  rollout::RolloutConfig cfg;

  auto batch = rollout::simulate_batch(policies, fleet, model, scen, 4, seed,
                                       /*with_gradients=*/true, duals, cfg, 1);

  // Independent route: redo the backward sweep on copies of the traces and
  // accumulate the exact parameter gradient of the batch-mean Lagrangian.
  int n_samples = 0;
  for (const auto& tr : batch.episodes) {
    if (tr.ok) n_samples += tr.t_horizon;
  }
  std::vector<policy::ParamGrad> exact(fleet.size());
  for (const auto& tr : batch.episodes) {
    if (!tr.ok) continue;
    auto clone = tr;
    rollout::backward_rollout(clone, duals, policies, fleet, model, cfg);
    for (int t = 0; t < clone.t_horizon; ++t) {
      for (int a = 0; a < fleet.size(); ++a) {
        const auto& rec = clone.steps[t][a];
        policy::accumulate_output_grad(policies.agents[a], rec.obs, rec.g_mu,
                                       rec.g_sigma, exact[a]);
      }
    }
  }
  const double inv = 1.0 / n_samples;

  // At the expansion point the proximal penalty must not perturb the
  // gradient, whatever beta is.
  for (const double beta : {0.0, 1000.0}) {
    const auto sur = trainer::surrogate_loss(policies, batch, beta, 0.0);
    for (int a = 0; a < fleet.size(); ++a) {
      const double scale =
          std::max(1.0, exact[a].w1.cwiseAbs().maxCoeff() * inv);
      rep.max_rel_err = std::max(
          rep.max_rel_err,
          (sur.grads[a].w1 - inv * exact[a].w1).cwiseAbs().maxCoeff() / scale);
      rep.max_rel_err = std::max(
          rep.max_rel_err,
          (sur.grads[a].b1 - inv * exact[a].b1).cwiseAbs().maxCoeff() / scale);
      rep.max_rel_err = std::max(
          rep.max_rel_err,
          (sur.grads[a].w2 - inv * exact[a].w2).cwiseAbs().maxCoeff() / scale);
      rep.max_rel_err = std::max(
          rep.max_rel_err,
          (sur.grads[a].b2 - inv * exact[a].b2).cwiseAbs().maxCoeff() / scale);
      ++rep.n_checked;
    }
  }
  return rep;
}

}  // namespace gradmap::gradcheck
