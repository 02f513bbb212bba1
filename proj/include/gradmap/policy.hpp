#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gradmap/devices.hpp"
#include "gradmap/types.hpp"

namespace gradmap::policy {

inline constexpr int kObsDim = 8;
inline constexpr int kHidden = 16;
inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 1.0;

using Observation = Eigen::Matrix<double, kObsDim, 1>;

/// Two-layer tanh MLP, one independent copy per agent.
struct PolicyParams {
  MatR w1{kHidden, kObsDim};
  VecR b1{kHidden};
  MatR w2{2, kHidden};  // rows: mu, log sigma
  VecR b2{2};

  static PolicyParams init(std::uint64_t seed);
  static int flat_size() { return kHidden * kObsDim + kHidden + 2 * kHidden + 2; }
  VecR flatten() const;
  static PolicyParams from_flat(const VecR& flat);
};

struct PolicySet {
  std::vector<PolicyParams> agents;

  static PolicySet init(int n_agents, std::uint64_t seed);
  int size() const { return static_cast<int>(agents.size()); }
};

struct PolicyOutput {
  double mu = 0.0;
  double log_sigma = 0.0;  // clamped
  double sigma = 1.0;
};

PolicyOutput policy_forward(const PolicyParams& params, const Observation& obs,
                            bool linear_activation = false);

// a_raw = mu + sigma eps, a_clipped = clip(a_raw, -1, 1)
std::pair<double, double> sample_action(const PolicyOutput& out, double epsilon);

double decode_action(double a_clipped, const devices::Agent& agent);
// Derivative of the decoded command w.r.t. the clipped action.
double decode_action_grad(const devices::Agent& agent);

// Reparameterisation: (g_mu, g_sigma) = (g_a, g_a * eps)
std::pair<double, double> output_gradients(double g_a, double epsilon);

// d a_raw / d obs for a fixed noise draw: d mu/d obs + eps d sigma/d obs.
// Needed for the closed-loop part of the rollout adjoint (actions react to
// state- and voltage-dependent observation features).
Observation action_obs_gradient(const PolicyParams& params,
                                const Observation& obs, double epsilon,
                                bool linear_activation = false);

// Derivatives of the state-dependent observation entries w.r.t. the device
// state: d obs(1) (state norm) and d obs(6) (mapped urgency, incl. the /6).
struct ObsStateGrad {
  double d_state_norm = 0.0;
  double d_urgency = 0.0;
};
ObsStateGrad obs_state_gradient(const devices::Agent& agent, double state,
                                double t_bar);

double entropy(double sigma);  // 0.5 ln(2 pi e sigma^2)

struct ParamGrad {
  MatR w1 = MatR::Zero(kHidden, kObsDim);
  VecR b1 = VecR::Zero(kHidden);
  MatR w2 = MatR::Zero(2, kHidden);
  VecR b2 = VecR::Zero(2);

  void setZero();
  void add_scaled(const ParamGrad& other, double scale);
  double squared_norm() const;
};

// Accumulates d(g_mu mu(theta) + g_sigma sigma(theta)) / d theta into grad.
// Recomputes the forward pass on obs; the log-sigma clamp contributes its
// subgradient (zero strictly outside [-5, 1]).
void accumulate_output_grad(const PolicyParams& params, const Observation& obs,
                            double g_mu, double g_sigma, ParamGrad& grad,
                            bool linear_activation = false);

struct NormStats {
  double demand_min = 0.0, demand_max = 1.0;
  double price_imp_min = 0.0, price_imp_max = 1.0;
  double price_exp_min = 0.0, price_exp_max = 1.0;
  double temp_min = 0.0, temp_max = 1.0;
};

double urgency_feature(const devices::Agent& agent, double state, double t_bar);

Observation build_observation(const devices::Agent& agent, double state, int t,
                              int t_horizon, double net_demand_kw,
                              double price_import, double price_export,
                              double theta_out, double v_local_pu,
                              const NormStats& stats);

}  // namespace gradmap::policy
