#pragma once

#include <string>

#include "gradmap/devices.hpp"
#include "gradmap/policy.hpp"
#include "gradmap/rollout.hpp"
#include "gradmap/scenario.hpp"
#include "gradmap/trainer.hpp"

namespace gradmap::io {

devices::DeviceFleet load_fleet(const std::string& path);
void save_fleet(const devices::DeviceFleet& fleet, const std::string& path);

scenario::Scenario load_scenario(const std::string& path);
void save_scenario(const scenario::Scenario& scen, const std::string& path);

// Checkpoint: agent id -> flat parameter array, with a layout-version tag.
void save_checkpoint(const policy::PolicySet& policies,
                     const devices::DeviceFleet& fleet,
                     const std::string& path);
policy::PolicySet load_checkpoint(const std::string& path,
                                  const devices::DeviceFleet& fleet);

void write_training_log(const std::vector<trainer::LogRow>& log,
                        const std::string& path);

void write_metrics(const trainer::EvalMetrics& metrics,
                   const std::string& path);

// Per-episode trace CSV (t, agent, action, command, power, state, cost) and
// voltage CSV (t, node, phase, v magnitude).
void export_trace(const rollout::EpisodeTrace& trace,
                  const devices::DeviceFleet& fleet,
                  const feeder::NetworkModel& model,
                  const std::string& trace_path,
                  const std::string& voltage_path);

}  // namespace gradmap::io
