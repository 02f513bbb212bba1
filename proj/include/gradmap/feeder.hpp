#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gradmap/types.hpp"

namespace gradmap::feeder {

struct FeederError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedFeeder : FeederError {
  using FeederError::FeederError;
};
struct SingularAdmittance : FeederError {
  using FeederError::FeederError;
};
struct DegenerateVoltage : FeederError {
  using FeederError::FeederError;
};

/// Three-phase network in Z-Bus form. Immutable after construction and
/// shareable across rollout workers.
struct NetworkModel {
  int n_buses = 0;  // non-slack three-phase buses
  MatC y_ll;        // 3N x 3N
  MatC y_l0;        // 3N x 3
  MatC z;           // y_ll^{-1}
  VecC w;           // no-load voltage offset, -Z Y_L0 v0
  VecC v0;          // slack voltage, length 3
  SpMatR h;         // phase-to-neutral <-> phase-to-phase map
  double v_min = 0.95;
  double v_max = 1.05;
  double s_base_kw = 100.0;
  double v_base_kv = 0.4;

  std::vector<std::string> bus_ids;  // non-slack, in matrix order
  std::unordered_map<std::string, int> bus_index;

  int dim() const { return 3 * n_buses; }
  // Flat node-phase index for an agent connection.
  int node_phase(const std::string& bus, int phase) const;
};

struct Injection {
  VecC s_wye;
  VecC s_delta;

  static Injection zero(int dim3n) {
    return {VecC::Zero(dim3n), VecC::Zero(dim3n)};
  }
};

struct PowerFlowSolution {
  VecC v;
  VecC i_delta;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

NetworkModel build_network(const nlohmann::json& feeder_description);
NetworkModel load_network(const std::string& path);

// i_inj = conj(s_wye ./ v) + H^T conj(s_delta ./ (H v))
VecC injection_map(const VecC& v, const Injection& inj,
                   const NetworkModel& model);

PowerFlowSolution solve_power_flow(const Injection& inj,
                                   const NetworkModel& model,
                                   const VecC* warm_start = nullptr,
                                   double tol = 1e-8, int max_iter = 200);

// Infinity norm of the power mismatch in the AC flow equations.
double pf_mismatch(const VecC& v, const Injection& inj,
                   const NetworkModel& model);

// Largest per-node-phase voltage-band violation for one solved step.
// If g_v is non-null it receives the subgradient w.r.t. [Re v; Im v]
// (full unit subgradient at the lowest-index maximiser).
double voltage_violation_step(const VecC& v, const NetworkModel& model,
                              VecR* g_v = nullptr);

// Episode-level voltage channel, normalised by 0.5 (v_max - v_min) T / N.
double voltage_violation(const std::vector<PowerFlowSolution>& solutions,
                         const NetworkModel& model, int n_agents);

struct SensitivityOptions {
  double tol = 1e-10;
  int max_iter = 0;    // 0 -> 2 * 6N
  bool direct = false; // dense LU fallback for small systems
};

struct SensitivityResult {
  VecR grad_wye;  // d V_volt / d s_wye, stacked [Re; Im], length 6N
  bool converged = false;
  int iterations = 0;
};

// Adjoint of the fixed point v = Phi(v, s): solves (I - dPhi/dv)^T gamma = g_v
// in real-stacked coordinates and returns (dPhi/ds_wye)^T gamma.
// On Krylov failure returns the zero vector with converged = false.
SensitivityResult voltage_sensitivity(const PowerFlowSolution& solution,
                                      const Injection& inj,
                                      const NetworkModel& model,
                                      const VecR& g_v,
                                      const SensitivityOptions& opts = {});

}  // namespace gradmap::feeder
