#pragma once

#include "drflex/model.hpp"
#include "drflex/scheduler.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drflex {

struct Limits {
    double lo = 0.0;
    double hi = 0.0;
};

struct PIState {
    double integrator = 0.0;
    double last_output = 0.0;
    std::optional<Limits> limits;
};

/// output = kp * error + integrator, clamped to the limits. The integrator
/// advances by ki * error * dt unless the output is saturated and the error
/// would push it further out.
double pi_step(PIState& state, const PIParams& params, double error, double dt);

struct FFPIState {
    PIState pi;
    double ff_filter = 0.0;  ///< lead-filter state, tracks the reference
};

/// PI on (reference - measurement) plus the reference lead filter
/// (s t_ff + 1) / (h_nom (s t_filter + 1)), trapezoidal discretization.
/// Saturation applies to the combined command. Requires dt <= t_filter / 2.
double ffpi_step(FFPIState& state, const FFPIParams& params, double reference,
                 double measurement, double dt);

struct CoordinatorConfig {
    TwoLevelModel model;
    std::vector<FleetSpec> fleets;  ///< one per group
    double redispatch_threshold = 0.5;          ///< kW of target change
    std::vector<std::optional<Limits>> group_limits;  ///< empty: [0, capacity]

    void validate() const;
    FleetSpec merged_fleet() const;
};

struct CoordinatorState {
    PIState outer;
    std::vector<FFPIState> inner;
    Assignment current_assignment;
    std::vector<double> group_refs;
    std::vector<double> group_bases;   ///< scheduled per-group power
    double dispatched_target = 0.0;
    bool dispatched = false;
    std::vector<std::string> events;   ///< infeasible dispatches etc.
};

CoordinatorState make_coordinator_state(const CoordinatorConfig& cfg);

/// Runs the device scheduler for the given target and updates the assignment
/// and per-group bases. Infeasible dispatches fall back to the fleet minimum
/// feasible point and are logged in state.events.
void coordinator_dispatch(CoordinatorState& state, const CoordinatorConfig& cfg, double target,
                          double uncontrollable_estimate);

/// One control period: outer PI on the building error, correction distributed
/// by participation factors on top of the scheduler bases, inner FF-PI steps
/// per group. The scheduler reruns only when the target moved more than the
/// redispatch threshold since the last dispatch; an infeasible dispatch falls
/// back to the fleet's minimum feasible point and is logged in `events`.
std::vector<double> coordinator_step(CoordinatorState& state, const CoordinatorConfig& cfg,
                                     double target, std::span<const double> group_measurements,
                                     double uncontrollable_estimate, double dt);

}  // namespace drflex
