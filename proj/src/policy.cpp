#include "gradmap/policy.hpp"

#include <cmath>
#include <random>

namespace gradmap::policy {

PolicyParams PolicyParams::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  PolicyParams p;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(kObsDim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
  for (int i = 0; i < kHidden; ++i)
    for (int j = 0; j < kObsDim; ++j) p.w1(i, j) = s1 * unit(rng);
  p.b1.setZero();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < kHidden; ++j) p.w2(i, j) = s2 * unit(rng);
  p.b2(0) = 0.0;
  p.b2(1) = -2.0;  // initial std exp(-2) ~ 0.135
  return p;
}

VecR PolicyParams::flatten() const {
  VecR flat(flat_size());
  int o = 0;
  flat.segment(o, w1.size()) = Eigen::Map<const VecR>(w1.data(), w1.size());
  o += static_cast<int>(w1.size());
  flat.segment(o, b1.size()) = b1;
  o += static_cast<int>(b1.size());
  flat.segment(o, w2.size()) = Eigen::Map<const VecR>(w2.data(), w2.size());
  o += static_cast<int>(w2.size());
  flat.segment(o, b2.size()) = b2;
  return flat;
}

PolicyParams PolicyParams::from_flat(const VecR& flat) {
  PolicyParams p;
  int o = 0;
  Eigen::Map<VecR>(p.w1.data(), p.w1.size()) = flat.segment(o, p.w1.size());
  o += static_cast<int>(p.w1.size());
  p.b1 = flat.segment(o, p.b1.size());
  o += static_cast<int>(p.b1.size());
  Eigen::Map<VecR>(p.w2.data(), p.w2.size()) = flat.segment(o, p.w2.size());
  o += static_cast<int>(p.w2.size());
  p.b2 = flat.segment(o, p.b2.size());
  return p;
}

PolicySet PolicySet::init(int n_agents, std::uint64_t seed) {
  PolicySet set;
  set.agents.reserve(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    set.agents.push_back(PolicyParams::init(seed * 0x9e3779b97f4a7c15ULL + i));
  }
  return set;
}

PolicyOutput policy_forward(const PolicyParams& params, const Observation& obs,
                            bool linear_activation) {
  VecR h = params.w1 * obs + params.b1;
  if (!linear_activation) h = h.array().tanh();
  const VecR z2 = params.w2 * h + params.b2;
  PolicyOutput out;
  out.mu = z2(0);
  out.log_sigma = clip(z2(1), kLogSigmaMin, kLogSigmaMax);
  out.sigma = std::exp(out.log_sigma);
  return out;
}

std::pair<double, double> sample_action(const PolicyOutput& out,
                                        double epsilon) {
  const double a_raw = out.mu + out.sigma * epsilon;
  return {a_raw, clip(a_raw, -1.0, 1.0)};
}

double decode_action(double a_clipped, const devices::Agent& agent) {
  using devices::DeviceType;
  switch (agent.type) {
    case DeviceType::Battery:
      return a_clipped * std::get<devices::BatteryParams>(agent.params).p_max;
    case DeviceType::HeatPump:
      return (a_clipped + 1.0) / 2.0 *
             std::get<devices::HeatPumpParams>(agent.params).p_max;
    case DeviceType::Generator: {
      const auto& g = std::get<devices::GeneratorParams>(agent.params);
      return g.p_min + (a_clipped + 1.0) / 2.0 * (g.p_max - g.p_min);
    }
  }
  return 0.0;
}

double decode_action_grad(const devices::Agent& agent) {
  using devices::DeviceType;
  switch (agent.type) {
    case DeviceType::Battery:
      return std::get<devices::BatteryParams>(agent.params).p_max;
    case DeviceType::HeatPump:
      return std::get<devices::HeatPumpParams>(agent.params).p_max / 2.0;
    case DeviceType::Generator: {
      const auto& g = std::get<devices::GeneratorParams>(agent.params);
      return (g.p_max - g.p_min) / 2.0;
    }
  }
  return 0.0;
}

std::pair<double, double> output_gradients(double g_a, double epsilon) {
  return {g_a, g_a * epsilon};
}

Observation action_obs_gradient(const PolicyParams& params,
                                const Observation& obs, double epsilon,
                                bool linear_activation) {
  VecR z1 = params.w1 * obs + params.b1;
  VecR h = linear_activation ? z1 : VecR(z1.array().tanh());
  const VecR z2 = params.w2 * h + params.b2;
  const double sigma = std::exp(clip(z2(1), kLogSigmaMin, kLogSigmaMax));

  Eigen::Vector2d dz2;  // a_raw = mu + sigma * eps
  dz2(0) = 1.0;
  dz2(1) = epsilon * sigma * clip_grad(z2(1), kLogSigmaMin, kLogSigmaMax);
  VecR dh = params.w2.transpose() * dz2;
  VecR dz1 =
      linear_activation ? dh : VecR(dh.array() * (1.0 - h.array().square()));
  return params.w1.transpose() * dz1;
}

ObsStateGrad obs_state_gradient(const devices::Agent& agent, double state,
                                double t_bar) {
  using devices::DeviceType;
  ObsStateGrad g;
  double num = 0.0;
  double half_scale = 1.0;
  if (agent.type == DeviceType::Battery) {
    const auto& b = std::get<devices::BatteryParams>(agent.params);
    g.d_state_norm = 1.0 / b.e_max;
    num = b.e_target - state;
    half_scale = b.e_max / 2.0;
  } else if (agent.type == DeviceType::HeatPump) {
    const auto& hpar = std::get<devices::HeatPumpParams>(agent.params);
    g.d_state_norm = 1.0 / (2.0 * hpar.delta);
    num = hpar.theta_target - state;
    half_scale = hpar.delta;
  } else {
    const auto& gp = std::get<devices::GeneratorParams>(agent.params);
    g.d_state_norm = 1.0 / (gp.p_max - gp.p_min);
    return g;  // generator urgency is constant
  }
  const double remain = 1.0 - t_bar;
  if (remain > 0.0) {
    const double u = num / (remain * half_scale);
    g.d_urgency = -clip_grad(u, -3.0, 3.0) / (remain * half_scale) / 6.0;
  }
  return g;
}

double entropy(double sigma) {
  return 0.5 * std::log(2.0 * M_PI * M_E * sigma * sigma);
}

void ParamGrad::setZero() {
  w1.setZero();
  b1.setZero();
  w2.setZero();
  b2.setZero();
}

void ParamGrad::add_scaled(const ParamGrad& other, double scale) {
  w1 += scale * other.w1;
  b1 += scale * other.b1;
  w2 += scale * other.w2;
  b2 += scale * other.b2;
}

double ParamGrad::squared_norm() const {
  return w1.squaredNorm() + b1.squaredNorm() + w2.squaredNorm() +
         b2.squaredNorm();
}

void accumulate_output_grad(const PolicyParams& params, const Observation& obs,
                            double g_mu, double g_sigma, ParamGrad& grad,
                            bool linear_activation) {
  VecR z1 = params.w1 * obs + params.b1;
  VecR h = linear_activation ? z1 : VecR(z1.array().tanh());
  const VecR z2 = params.w2 * h + params.b2;
  const double ls_clamped = clip(z2(1), kLogSigmaMin, kLogSigmaMax);
  const double sigma = std::exp(ls_clamped);

  Eigen::Vector2d dz2;
  dz2(0) = g_mu;
  dz2(1) = g_sigma * sigma * clip_grad(z2(1), kLogSigmaMin, kLogSigmaMax);

  grad.w2 += dz2 * h.transpose();
  grad.b2 += dz2;
  VecR dh = params.w2.transpose() * dz2;
  VecR dz1 = linear_activation
                 ? dh
                 : VecR(dh.array() * (1.0 - h.array().square()));
  grad.w1 += dz1 * obs.transpose();
  grad.b1 += dz1;
}

double urgency_feature(const devices::Agent& agent, double state,
                       double t_bar) {
  using devices::DeviceType;
  double num = 0.0;
  double half_scale = 1.0;
  if (agent.type == DeviceType::Battery) {
    const auto& b = std::get<devices::BatteryParams>(agent.params);
    num = b.e_target - state;
    half_scale = b.e_max / 2.0;
  } else if (agent.type == DeviceType::HeatPump) {
    const auto& hpar = std::get<devices::HeatPumpParams>(agent.params);
    num = hpar.theta_target - state;
    half_scale = hpar.delta;
  } else {
    return 0.0;
  }
  if (num == 0.0) return 0.0;
  const double remain = 1.0 - t_bar;
  // The urgency ratio blows up as t_bar -> 1; the clamp absorbs it.
  if (remain <= 0.0) return num > 0.0 ? 3.0 : -3.0;
  return clip(num / (remain * half_scale), -3.0, 3.0);
}

namespace {
double minmax(double x, double lo, double hi) {
  if (hi <= lo) return 0.0;
  return (x - lo) / (hi - lo);
}
}  // namespace

Observation build_observation(const devices::Agent& agent, double state, int t,
                              int t_horizon, double net_demand_kw,
                              double price_import, double price_export,
                              double theta_out, double v_local_pu,
                              const NormStats& stats) {
  using devices::DeviceType;
  const double t_bar = static_cast<double>(t) / static_cast<double>(t_horizon);

  double x_bar = 0.0;
  if (agent.type == DeviceType::Battery) {
    const auto& b = std::get<devices::BatteryParams>(agent.params);
    x_bar = state / b.e_max;
  } else if (agent.type == DeviceType::HeatPump) {
    const auto& hpar = std::get<devices::HeatPumpParams>(agent.params);
    x_bar = (state - (hpar.theta_set - hpar.delta)) / (2.0 * hpar.delta);
  } else {
    const auto& g = std::get<devices::GeneratorParams>(agent.params);
    x_bar = (state - g.p_min) / (g.p_max - g.p_min);
  }

  Observation obs;
  obs(0) = t_bar;
  obs(1) = x_bar;
  obs(2) = minmax(net_demand_kw, stats.demand_min, stats.demand_max);
  obs(3) = minmax(price_import, stats.price_imp_min, stats.price_imp_max);
  obs(4) = minmax(price_export, stats.price_exp_min, stats.price_exp_max);
  obs(5) = minmax(theta_out, stats.temp_min, stats.temp_max);
  obs(6) = (urgency_feature(agent, state, t_bar) + 3.0) / 6.0;
  obs(7) = clip((v_local_pu - 0.9) / 0.2, 0.0, 1.0);
  return obs;
}

}  // namespace gradmap::policy
