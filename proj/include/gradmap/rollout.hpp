#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gradmap/devices.hpp"
#include "gradmap/feeder.hpp"
#include "gradmap/policy.hpp"
#include "gradmap/scenario.hpp"

namespace gradmap::rollout {

struct ViolationChannels {
  double volt = 0.0, bstp = 0.0, bend = 0.0, hstp = 0.0, hend = 0.0,
         grmp = 0.0;

  std::array<double, 6> as_array() const {
    return {volt, bstp, bend, hstp, hend, grmp};
  }
  static const std::array<const char*, 6>& names();
};

/// Lagrange multipliers for the six violation channels.
struct DualState {
  double volt = 0.0, bstp = 0.0, bend = 0.0, hstp = 0.0, hend = 0.0,
         grmp = 0.0;

  std::array<double, 6> as_array() const {
    return {volt, bstp, bend, hstp, hend, grmp};
  }
};

struct StepRecord {
  policy::Observation obs;
  double state_before = 0.0;
  double epsilon = 0.0;
  double a_raw = 0.0;
  double a_clipped = 0.0;
  double command = 0.0;
  double mu_old = 0.0;
  double sigma_old = 1.0;
  devices::StepResult step;
  double net_power_kw = 0.0;  // household net, demand-positive
  double meter_cost = 0.0;
  // cached gradients (filled by backward_rollout)
  double g_a = 0.0, g_mu = 0.0, g_sigma = 0.0;
};

struct EpisodeTrace {
  int t_horizon = 0;
  int n_agents = 0;
  int day = 0;
  double dt = 1.0;
  std::vector<std::vector<StepRecord>> steps;  // [t][agent], t = 0..T-1
  std::vector<feeder::Injection> injections;   // per step
  std::vector<feeder::PowerFlowSolution> pf;   // per step
  VecR price_import, price_export, theta_out;  // per step
  std::vector<double> initial_states;
  std::vector<double> final_states;
  ViolationChannels channels;
  double total_cost = 0.0;  // $, devices + meters, over all agents and steps
  bool ok = true;           // all power flows converged
  int pf_failures = 0;
};

// Fixed rule replacing the policy (naive baseline).
using CommandRule =
    std::function<double(const devices::Agent&, int t, double state, double theta_out)>;

struct SimOptions {
  bool deterministic = false;      // epsilon = 0 everywhere
  bool randomize_initial = false;  // training-style initial-state draw
  std::uint64_t noise_seed = 0;
  const std::vector<double>* initial_states = nullptr;  // override fleet defaults
  bool warm_start = true;  // reuse previous step's voltages
  // Finite-difference probe: adds delta to a_raw of one (agent, step).
  int bump_agent = -1;
  int bump_t = -1;  // 1-based
  double bump_delta = 0.0;
  const CommandRule* rule = nullptr;
  // Power-flow stopping rule; finite-difference probes tighten this.
  double pf_tol = 1e-8;
  int pf_max_iter = 200;
};

struct RolloutConfig {
  double m_cost = 200.0;  // cost-normalisation constant M
  feeder::SensitivityOptions sensitivity;
};

EpisodeTrace simulate_episode(const policy::PolicySet& policies,
                              const devices::DeviceFleet& fleet,
                              const feeder::NetworkModel& model,
                              const scenario::Scenario& scen, int day,
                              const SimOptions& opts);

double lagrangian(const EpisodeTrace& trace, const DualState& duals,
                  const devices::DeviceFleet& fleet, const RolloutConfig& cfg);

struct BackwardDiagnostics {
  int sensitivity_failures = 0;
};

// Reverse sweep over the trace: fills g_a and the cached (g_mu, g_sigma)
// per (step, agent). Requires an episode with all power flows converged.
// The sweep follows every path of the closed loop, including the reaction of
// later actions to state- and voltage-dependent observation features, so the
// policies that generated the trace are needed again here.
BackwardDiagnostics backward_rollout(EpisodeTrace& trace, const DualState& duals,
                                     const policy::PolicySet& policies,
                                     const devices::DeviceFleet& fleet,
                                     const feeder::NetworkModel& model,
                                     const RolloutConfig& cfg);

struct RolloutBatch {
  std::vector<EpisodeTrace> episodes;
  ViolationChannels mean_channels;  // over non-failed episodes
  double mean_cost = 0.0;           // $ per episode
  int n_failed = 0;
  int sensitivity_failures = 0;
  bool with_gradients = false;
};

RolloutBatch simulate_batch(const policy::PolicySet& policies,
                            const devices::DeviceFleet& fleet,
                            const feeder::NetworkModel& model,
                            const scenario::Scenario& scen, int batch_size,
                            std::uint64_t seed, bool with_gradients,
                            const DualState& duals, const RolloutConfig& cfg,
                            int workers = 1);

// Per-episode noise stream id; fixed so batches are reproducible.
std::uint64_t episode_stream_seed(std::uint64_t seed, int episode_index);

}  // namespace gradmap::rollout
