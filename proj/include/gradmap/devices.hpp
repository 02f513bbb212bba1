#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "gradmap/types.hpp"

namespace gradmap::devices {

struct BatteryParams {
  double e_max = 10.0;     // kWh
  double p_max = 5.0;      // kW
  double e_target = 5.0;   // kWh
  double c_deg = 0.01;     // $/kWh throughput
  double eff_a = 0.95;     // eta(P) = a - b exp(-c |P| / p_max)
  double eff_b = 0.10;
  double eff_c = 6.0;

  double efficiency(double p_cmd) const {
    return eff_a - eff_b * std::exp(-eff_c * std::abs(p_cmd) / p_max);
  }
  double efficiency_deriv(double p_cmd) const {
    return eff_b * eff_c * sgn0(p_cmd) / p_max *
           std::exp(-eff_c * std::abs(p_cmd) / p_max);
  }
};

struct HeatPumpParams {
  double r = 2.0;            // degC/kW
  double c = 4.0;            // kWh/degC
  double cop = 3.0;
  double p_max = 3.0;        // kW
  double theta_set = 20.0;   // degC
  double delta = 2.0;        // comfort half-band
  double theta_target = 20.0;
  double c_use = 0.005;      // $/kWh
};

struct GeneratorParams {
  double p_min = 0.0;   // kW
  double p_max = 8.0;
  double ramp_dn = -2.0;  // kW per step, < 0
  double ramp_up = 2.0;
  double fuel_a = 0.08;   // $/kWh
  double fuel_b = 0.005;  // $/kW.kWh
};

enum class DeviceType { Battery, HeatPump, Generator };

using DeviceParams = std::variant<BatteryParams, HeatPumpParams, GeneratorParams>;

// Device state is scalar for all three types: battery energy (kWh),
// indoor temperature (degC), or previous generator output (kW).
struct StepResult {
  double next_state = 0.0;
  double actual_power = 0.0;   // kW; demand-positive for battery/heat pump,
                               // generated power for generators
  double implied_value = 0.0;  // pre-clip auxiliary (E_hat, theta_hat, dP_hat)
  double cost = 0.0;           // device-local $, excludes meter energy cost
  double violation_raw = 0.0;  // per-step channel raw (Bstp, Hstp or Grmp)
};

StepResult battery_step(double energy, double p_cmd, const BatteryParams& p,
                        double dt);
StepResult heatpump_step(double theta, double p_cmd, const HeatPumpParams& p,
                         double theta_out, double dt);
StepResult generator_step(double p_prev, double p_cmd, const GeneratorParams& p,
                          double dt);

// (rho_imp [p]^+ - rho_exp [-p]^+) dt, demand-positive p in kW
double meter_cost(double net_power, double price_import, double price_export,
                  double dt);
double meter_cost_grad(double net_power, double price_import,
                       double price_export, double dt);

struct UpstreamAdjoint {
  double d_next_state = 0.0;
  double d_actual_power = 0.0;
  double d_cost = 0.0;
  double d_violation_raw = 0.0;
};

struct StepAdjoint {
  double d_command = 0.0;
  double d_state = 0.0;
};

StepAdjoint battery_step_backward(double energy, double p_cmd,
                                  const BatteryParams& p, double dt,
                                  const UpstreamAdjoint& up);
StepAdjoint heatpump_step_backward(double theta, double p_cmd,
                                   const HeatPumpParams& p, double theta_out,
                                   double dt, const UpstreamAdjoint& up);
StepAdjoint generator_step_backward(double p_prev, double p_cmd,
                                    const GeneratorParams& p, double dt,
                                    const UpstreamAdjoint& up);

/// One grid-edge agent: a device connected to a node-phase of the feeder.
struct Agent {
  std::string id;
  DeviceType type = DeviceType::Battery;
  DeviceParams params;
  std::string bus;
  int phase = 0;           // 0=a, 1=b, 2=c
  double initial_state = 0.0;
  double power_factor = 0.95;  // lagging, applied to household net power

  double device_p_max() const;
  // Net-power sign of the device's actual power: +1 demand, -1 generation.
  double net_sign() const {
    return type == DeviceType::Generator ? -1.0 : 1.0;
  }
};

struct DeviceFleet {
  std::vector<Agent> agents;

  int size() const { return static_cast<int>(agents.size()); }
  double mean_p_max() const;
};

}  // namespace gradmap::devices
