#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradmap/rollout.hpp"

namespace gradmap::trainer {

using rollout::DualState;
using rollout::ViolationChannels;

struct TrustState {
  double beta = 1000.0;
  double epsilon_tr = 0.03;
};
inline constexpr double kBetaMin = 50.0;
inline constexpr double kBetaMax = 1e4;

enum class Mode { GradMAP, GradMA, Naive };
Mode parse_mode(const std::string& name);
std::string mode_name(Mode m);

struct TrainConfig {
  int k_dual = 10;
  int k_primal = 5;
  int k_prox = 40;
  double learning_rate = 5e-4;
  double learning_rate_gradma = 2e-3;
  double dual_rate = 150.0;   // alpha
  double tau = 0.01;          // entropy coefficient
  double m_cost = 200.0;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Mode mode = Mode::GradMAP;
  bool freeze_volt_dual = false;  // keep lambda_volt at 0 (ablation)
  int workers = 1;
};

struct SurrogateResult {
  double loss = 0.0;
  std::vector<policy::ParamGrad> grads;  // one per agent
};

// GradMAP surrogate: mean over cached (episode, step) samples per agent of
//   g_mu mu + g_sigma sigma - tau H(sigma)
//   + beta/2 ((mu - mu_old)^2 + (sigma - sigma_old)^2)
// with fresh forward passes of the current parameters on the cached
// observations. beta = 0 recovers the exact-gradient (GradMA) step at the
// expansion point.
SurrogateResult surrogate_loss(const policy::PolicySet& policies,
                               const rollout::RolloutBatch& batch, double beta,
                               double tau);

// Root-mean-square policy-output displacement against the cached batch.
double trust_metric(const policy::PolicySet& policies,
                    const rollout::RolloutBatch& batch);

void beta_adapt(TrustState& trust, double measured);

void dual_update(DualState& duals, const ViolationChannels& mean_channels,
                 double alpha, bool freeze_volt = false);

struct LogRow {
  int dual_step = 0;
  int primal_step = 0;  // global, 1-based
  double mean_cost = 0.0;
  ViolationChannels channels;
  DualState duals;
  double beta = 0.0;
  double trust = 0.0;
  int pf_failed_episodes = 0;
  int sensitivity_failures = 0;
  int backward_calls = 0;  // cumulative environment-gradient evaluations
};

struct TrainResult {
  policy::PolicySet policies;
  std::vector<LogRow> log;
  // checkpoint after each dual step
  std::vector<policy::PolicySet> checkpoints;
};

TrainResult train(const TrainConfig& config, const devices::DeviceFleet& fleet,
                  const feeder::NetworkModel& model,
                  const scenario::Scenario& scen);

struct EvalMetrics {
  double total_cost = 0.0;         // $ over evaluated days
  double mean_volt = 0.0;          // mean per-day voltage channel
  double mean_bend = 0.0;
  double mean_hend = 0.0;
  double max_volt_violation_pu = 0.0;
  std::vector<double> day_costs;
};

EvalMetrics evaluate(const policy::PolicySet& policies,
                     const devices::DeviceFleet& fleet,
                     const feeder::NetworkModel& model,
                     const scenario::Scenario& scen, bool consecutive,
                     const rollout::CommandRule* rule = nullptr);

rollout::CommandRule naive_rule(double dt);

EvalMetrics naive_baseline(const devices::DeviceFleet& fleet,
                           const feeder::NetworkModel& model,
                           const scenario::Scenario& scen,
                           bool consecutive = true);

}  // namespace gradmap::trainer
