#include "gradmap/trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace gradmap::trainer {

Mode parse_mode(const std::string& name) {
  if (name == "gradmap") return Mode::GradMAP;
  if (name == "gradma") return Mode::GradMA;
  if (name == "naive") return Mode::Naive;
  throw std::invalid_argument("unknown mode: " + name);
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::GradMAP: return "gradmap";
    case Mode::GradMA: return "gradma";
    case Mode::Naive: return "naive";
  }
  return "?";
}

SurrogateResult surrogate_loss(const policy::PolicySet& policies,
                               const rollout::RolloutBatch& batch, double beta,
                               double tau) {
  const int n = policies.size();
  SurrogateResult res;
  res.grads.resize(n);

  int n_samples = 0;  // per agent: ok episodes x steps
  for (const auto& tr : batch.episodes) {
    if (tr.ok) n_samples += tr.t_horizon;
  }
  if (n_samples == 0) throw std::runtime_error("empty gradient cache");
  const double inv = 1.0 / n_samples;

  for (int a = 0; a < n; ++a) {
    auto& grad = res.grads[a];
    for (const auto& tr : batch.episodes) {
      if (!tr.ok) continue;
      for (int t = 0; t < tr.t_horizon; ++t) {
        const auto& rec = tr.steps[t][a];
        const auto out = policy::policy_forward(policies.agents[a], rec.obs);
        const double dmu = out.mu - rec.mu_old;
        const double dsig = out.sigma - rec.sigma_old;
        res.loss += inv * (rec.g_mu * out.mu + rec.g_sigma * out.sigma -
                           tau * policy::entropy(out.sigma) +
                           0.5 * beta * (dmu * dmu + dsig * dsig));
        const double g_mu_eff = rec.g_mu + beta * dmu;
        const double g_sigma_eff =
            rec.g_sigma - tau / out.sigma + beta * dsig;
        policy::accumulate_output_grad(policies.agents[a], rec.obs, g_mu_eff,
                                       g_sigma_eff, grad);
      }
    }
    grad.w1 *= inv;
    grad.b1 *= inv;
    grad.w2 *= inv;
    grad.b2 *= inv;
  }
  return res;
}

double trust_metric(const policy::PolicySet& policies,
                    const rollout::RolloutBatch& batch) {
  double sum = 0.0;
  long count = 0;
  for (const auto& tr : batch.episodes) {
    if (!tr.ok) continue;
    for (int t = 0; t < tr.t_horizon; ++t) {
      for (int a = 0; a < policies.size(); ++a) {
        const auto& rec = tr.steps[t][a];
        const auto out = policy::policy_forward(policies.agents[a], rec.obs);
        const double dmu = out.mu - rec.mu_old;
        const double dsig = out.sigma - rec.sigma_old;
        sum += dmu * dmu + dsig * dsig;
        ++count;
      }
    }
  }
  return count > 0 ? std::sqrt(sum / count) : 0.0;
}

void beta_adapt(TrustState& trust, double measured) {
  if (measured > trust.epsilon_tr) {
    trust.beta *= 1.1;
  } else if (measured < trust.epsilon_tr / 2.0) {
    trust.beta /= 1.1;
  }
  trust.beta = clip(trust.beta, kBetaMin, kBetaMax);
}

void dual_update(DualState& duals, const ViolationChannels& mean_channels,
                 double alpha, bool freeze_volt) {
  if (!freeze_volt) duals.volt = pos(duals.volt + alpha * mean_channels.volt);
  duals.bstp = pos(duals.bstp + alpha * mean_channels.bstp);
  duals.bend = pos(duals.bend + alpha * mean_channels.bend);
  duals.hstp = pos(duals.hstp + alpha * mean_channels.hstp);
  duals.hend = pos(duals.hend + alpha * mean_channels.hend);
  duals.grmp = pos(duals.grmp + alpha * mean_channels.grmp);
}

namespace {

struct AdamState {
  std::vector<policy::ParamGrad> m, v;
  int step = 0;

  explicit AdamState(int n_agents) : m(n_agents), v(n_agents) {}

  void update(policy::PolicySet& policies,
              const std::vector<policy::ParamGrad>& grads, double lr,
              double b1, double b2, double eps) {
    ++step;
    const double corr1 = 1.0 - std::pow(b1, step);
    const double corr2 = 1.0 - std::pow(b2, step);
    for (size_t a = 0; a < grads.size(); ++a) {
      auto upd = [&](MatR& param, MatR& ma, MatR& va, const MatR& g) {
        ma = b1 * ma + (1.0 - b1) * g;
        va = b2 * va + (1.0 - b2) * g.cwiseProduct(g);
        param -= lr * (ma / corr1).cwiseQuotient(
                          ((va / corr2).cwiseSqrt().array() + eps).matrix());
      };
      auto updv = [&](VecR& param, VecR& ma, VecR& va, const VecR& g) {
        ma = b1 * ma + (1.0 - b1) * g;
        va = b2 * va + (1.0 - b2) * g.cwiseProduct(g);
        param -= lr * (ma / corr1).cwiseQuotient(
                          ((va / corr2).cwiseSqrt().array() + eps).matrix());
      };
      auto& p = policies.agents[a];
      upd(p.w1, m[a].w1, v[a].w1, grads[a].w1);
      updv(p.b1, m[a].b1, v[a].b1, grads[a].b1);
      upd(p.w2, m[a].w2, v[a].w2, grads[a].w2);
      updv(p.b2, m[a].b2, v[a].b2, grads[a].b2);
    }
  }
};

bool params_finite(const policy::PolicySet& policies) {
  for (const auto& p : policies.agents) {
    if (!p.w1.allFinite() || !p.b1.allFinite() || !p.w2.allFinite() ||
        !p.b2.allFinite()) {
      return false;
    }
  }
  return true;
}

}  // namespace

TrainResult train(const TrainConfig& config, const devices::DeviceFleet& fleet,
                  const feeder::NetworkModel& model,
                  const scenario::Scenario& scen) {
  if (config.mode == Mode::Naive) {
    throw std::invalid_argument("naive mode has no training loop");
  }
  const bool gradma = config.mode == Mode::GradMA;

  TrainResult result;
  result.policies = policy::PolicySet::init(fleet.size(), config.seed);
  DualState duals;  // all zero
  TrustState trust;

  rollout::RolloutConfig rcfg;
  rcfg.m_cost = config.m_cost;

  int backward_calls = 0;
  int global_primal = 0;

  for (int m = 1; m <= config.k_dual; ++m) {
    rollout::RolloutBatch last_batch;
    for (int j = 1; j <= config.k_primal; ++j) {
      ++global_primal;
      const std::uint64_t batch_seed =
          rollout::episode_stream_seed(config.seed, global_primal * 65536);
      last_batch = rollout::simulate_batch(
          result.policies, fleet, model, scen, config.batch_size, batch_seed,
          /*with_gradients=*/true, duals, rcfg, config.workers);
      ++backward_calls;

      const int k_prox = gradma ? 1 : config.k_prox;
      const double beta = gradma ? 0.0 : trust.beta;
      const double lr = gradma ? config.learning_rate_gradma
                               : config.learning_rate;
      AdamState adam(fleet.size());  // fresh optimiser per primal step
      for (int e = 0; e < k_prox; ++e) {
        auto sur = surrogate_loss(result.policies, last_batch, beta, config.tau);
        adam.update(result.policies, sur.grads, lr, config.adam_beta1,
                    config.adam_beta2, config.adam_eps);
      }
      if (!params_finite(result.policies)) {
        throw std::runtime_error("NaN policy parameters; aborting training");
      }

      const double t_measured = trust_metric(result.policies, last_batch);
      if (!gradma) beta_adapt(trust, t_measured);

      LogRow row;
      row.dual_step = m;
      row.primal_step = global_primal;
      row.mean_cost = last_batch.mean_cost;
      row.channels = last_batch.mean_channels;
      row.duals = duals;
      row.beta = gradma ? 0.0 : trust.beta;
      row.trust = t_measured;
      row.pf_failed_episodes = last_batch.n_failed;
      row.sensitivity_failures = last_batch.sensitivity_failures;
      row.backward_calls = backward_calls;
      result.log.push_back(row);
    }
    dual_update(duals, last_batch.mean_channels, config.dual_rate,
                config.freeze_volt_dual);
    result.checkpoints.push_back(result.policies);
  }
  return result;
}

rollout::CommandRule naive_rule(double dt) {
  return [dt](const devices::Agent& agent, int /*t*/, double state,
              double theta_out) -> double {
    using devices::DeviceType;
    switch (agent.type) {
      case DeviceType::Battery:
        return 0.0;
      case DeviceType::HeatPump: {
        const auto& h = std::get<devices::HeatPumpParams>(agent.params);
        // Hold the implied temperature at the set point.
        const double p = ((h.theta_set - state) * h.c / dt -
                          (theta_out - state) / h.r) /
                         h.cop;
        return clip(p, 0.0, h.p_max);
      }
      case DeviceType::Generator:
        return std::get<devices::GeneratorParams>(agent.params).p_max;
    }
    return 0.0;
  };
}

EvalMetrics evaluate(const policy::PolicySet& policies,
                     const devices::DeviceFleet& fleet,
                     const feeder::NetworkModel& model,
                     const scenario::Scenario& scen, bool consecutive,
                     const rollout::CommandRule* rule) {
  EvalMetrics metrics;
  const int first_day =
      scen.test_days >= scen.n_days ? 0 : scen.train_days;
  std::vector<double> carry;
  for (int day = first_day; day < scen.n_days; ++day) {
    rollout::SimOptions opts;
    opts.deterministic = true;
    opts.rule = rule;
    if (consecutive && !carry.empty()) opts.initial_states = &carry;
    const auto trace =
        rollout::simulate_episode(policies, fleet, model, scen, day, opts);
    metrics.total_cost += trace.total_cost;
    metrics.day_costs.push_back(trace.total_cost);
    metrics.mean_volt += trace.channels.volt;
    metrics.mean_bend += trace.channels.bend;
    metrics.mean_hend += trace.channels.hend;
    for (const auto& pf : trace.pf) {
      if (pf.converged) {
        metrics.max_volt_violation_pu =
            std::max(metrics.max_volt_violation_pu,
                     feeder::voltage_violation_step(pf.v, model));
      }
    }
    carry = trace.final_states;
  }
  const int n_days = static_cast<int>(metrics.day_costs.size());
  if (n_days > 0) {
    metrics.mean_volt /= n_days;
    metrics.mean_bend /= n_days;
    metrics.mean_hend /= n_days;
  }
  return metrics;
}

EvalMetrics naive_baseline(const devices::DeviceFleet& fleet,
                           const feeder::NetworkModel& model,
                           const scenario::Scenario& scen, bool consecutive) {
  const auto rule = naive_rule(scen.dt);
  const auto policies = policy::PolicySet::init(fleet.size(), 0);
  return evaluate(policies, fleet, model, scen, consecutive, &rule);
}

}  // namespace gradmap::trainer
