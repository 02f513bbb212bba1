#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "gradmap/policy.hpp"
#include "gradmap/types.hpp"

namespace gradmap::scenario {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Exogenous time series for training and evaluation. Immutable once built.
struct Scenario {
  double dt = 1.0;        // hours
  int steps_per_day = 24; // T
  int n_days = 0;
  int n_agents = 0;

  MatR load;  // n_agents x (n_days * T), kW
  MatR pv;    // same shape, kW, >= 0
  VecR temp_out;      // length n_days * T, degC
  VecR price_import;  // $/kWh
  VecR price_export;  // $/kWh

  policy::NormStats stats;
  int train_days = 0;
  int test_days = 0;

  int total_steps() const { return n_days * steps_per_day; }
  // t is 1-based within the day.
  int step_index(int day, int t) const { return day * steps_per_day + t - 1; }
  double net_demand(int agent, int day, int t) const {
    const int k = step_index(day, t);
    return load(agent, k) - pv(agent, k);
  }
};

// Recomputes min/max normalisation statistics from the training split only.
policy::NormStats compute_stats(const Scenario& s);

Scenario generate_synthetic(std::uint64_t seed, int n_agents, int n_days,
                            double dt, int steps_per_day);

struct CsvPaths {
  std::string household;  // timestamp,agent_id,load_kw,pv_kw
  std::string weather;    // timestamp,temp_c
  std::string prices;     // timestamp,price_import,price_export
};

Scenario load_csv(const CsvPaths& paths, double dt, int steps_per_day,
                  int test_days);

}  // namespace gradmap::scenario
