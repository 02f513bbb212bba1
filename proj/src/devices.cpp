#include "gradmap/devices.hpp"

namespace gradmap::devices {

StepResult battery_step(double energy, double p_cmd, const BatteryParams& p,
                        double dt) {
  StepResult r;
  const double eta = p.efficiency(p_cmd);
  r.implied_value = energy + eta * p_cmd * dt;
  r.next_state = clip(r.implied_value, 0.0, p.e_max);
  r.actual_power = (r.next_state - energy) / (eta * dt);
  r.cost = p.c_deg * std::abs(r.actual_power) * dt;
  r.violation_raw =
      (pos(r.implied_value - p.e_max) + pos(-r.implied_value)) / p.p_max;
  return r;
}

StepResult heatpump_step(double theta, double p_cmd, const HeatPumpParams& p,
                         double theta_out, double dt) {
  StepResult r;
  const double lo = p.theta_set - p.delta;
  const double hi = p.theta_set + p.delta;
  r.implied_value = theta + dt / p.c * ((theta_out - theta) / p.r + p.cop * p_cmd);
  r.next_state = clip(r.implied_value, lo, hi);
  r.actual_power =
      (p.c / dt * (r.next_state - theta) - (theta_out - theta) / p.r) / p.cop;
  r.cost = p.c_use * std::abs(r.actual_power) * dt;
  r.violation_raw =
      (pos(r.implied_value - hi) + pos(lo - r.implied_value)) / p.delta;
  return r;
}

StepResult generator_step(double p_prev, double p_cmd, const GeneratorParams& p,
                          double dt) {
  StepResult r;
  r.implied_value = p_cmd - p_prev;  // implied power change
  const double dp = clip(r.implied_value, p.ramp_dn, p.ramp_up);
  r.actual_power = p_prev + dp;
  r.next_state = r.actual_power;
  r.cost = (p.fuel_a * r.actual_power + p.fuel_b * r.actual_power * r.actual_power) * dt;
  r.violation_raw = (pos(r.implied_value - p.ramp_up) + pos(p.ramp_dn - r.implied_value)) /
                    (0.5 * (p.ramp_up - p.ramp_dn));
  return r;
}

double meter_cost(double net_power, double price_import, double price_export,
                  double dt) {
  return (price_import * pos(net_power) - price_export * pos(-net_power)) * dt;
}

double meter_cost_grad(double net_power, double price_import,
                       double price_export, double dt) {
  if (net_power > 0.0) return price_import * dt;
  if (net_power < 0.0) return price_export * dt;
  return 0.0;
}

StepAdjoint battery_step_backward(double energy, double p_cmd,
                                  const BatteryParams& p, double dt,
                                  const UpstreamAdjoint& up) {
  const double eta = p.efficiency(p_cmd);
  const double deta = p.efficiency_deriv(p_cmd);
  const double e_hat = energy + eta * p_cmd * dt;
  const double e_next = clip(e_hat, 0.0, p.e_max);
  const double s = clip_grad(e_hat, 0.0, p.e_max);
  const double p_act = (e_next - energy) / (eta * dt);

  const double de_hat_dcmd = (deta * p_cmd + eta) * dt;
  // raw = ([e_hat - e_max]^+ + [-e_hat]^+) / p_max
  const double draw_de_hat =
      (pos_grad(e_hat - p.e_max) - pos_grad(-e_hat)) / p.p_max;

  // Fold the degradation-cost chain into the actual-power adjoint.
  const double g_p = up.d_actual_power + up.d_cost * p.c_deg * sgn0(p_act) * dt;

  // P = (E' - E) / (eta dt), with E' = clip(E + eta cmd dt)
  const double dp_dcmd = s * de_hat_dcmd / (eta * dt) -
                         (e_next - energy) * deta / (eta * eta * dt);
  const double dp_dstate = (s - 1.0) / (eta * dt);

  StepAdjoint adj;
  adj.d_command = up.d_next_state * s * de_hat_dcmd + g_p * dp_dcmd +
                  up.d_violation_raw * draw_de_hat * de_hat_dcmd;
  adj.d_state = up.d_next_state * s + g_p * dp_dstate +
                up.d_violation_raw * draw_de_hat;
  return adj;
}

StepAdjoint heatpump_step_backward(double theta, double p_cmd,
                                   const HeatPumpParams& p, double theta_out,
                                   double dt, const UpstreamAdjoint& up) {
  const double lo = p.theta_set - p.delta;
  const double hi = p.theta_set + p.delta;
  const double th_hat = theta + dt / p.c * ((theta_out - theta) / p.r + p.cop * p_cmd);
  const double s = clip_grad(th_hat, lo, hi);
  const double th_next = clip(th_hat, lo, hi);
  const double p_act =
      (p.c / dt * (th_next - theta) - (theta_out - theta) / p.r) / p.cop;

  const double dth_hat_dcmd = dt / p.c * p.cop;
  const double dth_hat_dstate = 1.0 - dt / (p.c * p.r);
  const double draw_dth_hat = (pos_grad(th_hat - hi) - pos_grad(lo - th_hat)) / p.delta;

  const double g_p = up.d_actual_power + up.d_cost * p.c_use * sgn0(p_act) * dt;

  const double dp_dcmd = p.c / dt * s * dth_hat_dcmd / p.cop;
  const double dp_dstate =
      (p.c / dt * (s * dth_hat_dstate - 1.0) + 1.0 / p.r) / p.cop;

  StepAdjoint adj;
  adj.d_command = up.d_next_state * s * dth_hat_dcmd + g_p * dp_dcmd +
                  up.d_violation_raw * draw_dth_hat * dth_hat_dcmd;
  adj.d_state = up.d_next_state * s * dth_hat_dstate + g_p * dp_dstate +
                up.d_violation_raw * draw_dth_hat * dth_hat_dstate;
  return adj;
}

StepAdjoint generator_step_backward(double p_prev, double p_cmd,
                                    const GeneratorParams& p, double dt,
                                    const UpstreamAdjoint& up) {
  const double dp_hat = p_cmd - p_prev;
  const double s = clip_grad(dp_hat, p.ramp_dn, p.ramp_up);
  const double p_act = p_prev + clip(dp_hat, p.ramp_dn, p.ramp_up);

  const double draw_ddp_hat =
      (pos_grad(dp_hat - p.ramp_up) - pos_grad(p.ramp_dn - dp_hat)) /
      (0.5 * (p.ramp_up - p.ramp_dn));

  // next_state == actual_power for generators
  const double g_p = up.d_next_state + up.d_actual_power +
                     up.d_cost * (p.fuel_a + 2.0 * p.fuel_b * p_act) * dt;

  StepAdjoint adj;
  adj.d_command = g_p * s + up.d_violation_raw * draw_ddp_hat;
  adj.d_state = g_p * (1.0 - s) - up.d_violation_raw * draw_ddp_hat;
  return adj;
}

double Agent::device_p_max() const {
  switch (type) {
    case DeviceType::Battery:
      return std::get<BatteryParams>(params).p_max;
    case DeviceType::HeatPump:
      return std::get<HeatPumpParams>(params).p_max;
    case DeviceType::Generator:
      return std::get<GeneratorParams>(params).p_max;
  }
  return 0.0;
}

double DeviceFleet::mean_p_max() const {
  double sum = 0.0;
  for (const auto& a : agents) sum += std::abs(a.device_p_max());
  return sum / static_cast<double>(agents.size());
}

}  // namespace gradmap::devices
