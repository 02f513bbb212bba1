#pragma once

#include <cstdint>

#include "gradmap/rollout.hpp"

namespace gradmap::gradcheck {

// Deterministic desk-scale fleet spread round-robin over the feeder's
// node-phases. Parameter pools follow the defaults used in the case studies.
devices::DeviceFleet desk_fleet(const feeder::NetworkModel& model, int n_bat,
                                int n_hp, int n_gen, std::uint64_t seed);

// A fleet dominated by cheap export-profitable generators at the feeder
// tail; on the weak 4-bus fixture an unconstrained policy drives the tail
// voltages over the upper band limit.
devices::DeviceFleet volt_stress_fleet(const feeder::NetworkModel& model,
                                       std::uint64_t seed);

// An injection pattern that pushes the 4-bus fixture into an over-voltage
// operating point (net generation at the far buses).
feeder::Injection violating_injection(const feeder::NetworkModel& model,
                                      double scale = 0.55);

struct CheckReport {
  double max_rel_err = 0.0;
  int n_checked = 0;
  int n_skipped = 0;  // coordinates too close to kinks
};

// Directional FD check of voltage_sensitivity on a violating operating point.
CheckReport check_voltage_sensitivity(const feeder::NetworkModel& model,
                                      std::uint64_t seed, int n_directions = 20,
                                      double h = 1e-6);

// FD check of the device step adjoints against random scalarised outputs.
CheckReport check_device_backward(std::uint64_t seed, int n_trials = 100,
                                  double h = 1e-6);

// Frozen-noise FD check of cached g_a on a small fleet/feeder fixture.
CheckReport check_rollout_gradient(const feeder::NetworkModel& model,
                                   std::uint64_t seed, int n_coords = 50,
                                   double h = 1e-5);

// Surrogate tangency: at theta_old with tau = 0 the surrogate parameter
// gradient must equal the exact Lagrangian gradient from a fresh backward
// pass, independent of beta.
CheckReport check_surrogate_tangency(const feeder::NetworkModel& model,
                                     std::uint64_t seed);

}  // namespace gradmap::gradcheck
