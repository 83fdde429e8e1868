#pragma once

#include "drflex/scheduler.hpp"
#include "drflex/testbed.hpp"

#include <filesystem>
#include <string>

namespace drflex {

/// Parses the JSON scenario document (schema in README). Throws
/// std::invalid_argument with a diagnostic on malformed input.
Scenario scenario_from_json(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& scenario);

/// Fleet file: {"on_off":[{"id","kw"}...],"continuous":[{"id","kw_min","kw_max"}...]}
FleetSpec fleet_from_json(const std::string& text);
FleetSpec load_fleet(const std::filesystem::path& path);
std::string fleet_to_json(const FleetSpec& fleet);

/// Assignment as JSON: statuses, setpoints, totals, the remaining gap to the
/// cap, and the optimality flag.
std::string assignment_to_json(const Assignment& assignment, double target,
                               double uncontrollable);

/// The stock three-group building: load racks (31 heaters + 60 blowers),
/// HVAC pumps/fans, PV inverters, lumped group plants, tuned gains, 14 kW
/// square-wave target.
Scenario default_scenario();

/// Same building with device-level rack/HVAC/PV actuation.
Scenario default_fleet_scenario();

/// The whole-building fleet of the default scenario.
FleetSpec default_fleet();

}  // namespace drflex
