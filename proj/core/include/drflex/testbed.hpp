#pragma once

#include "drflex/controllers.hpp"
#include "drflex/model.hpp"
#include "drflex/scheduler.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace drflex {

struct DeviceDynamics {
    double comm_delay = 0.0;         ///< dead time before a command is seen [s]
    double rise_time_constant = 1.0; ///< first-order rise [s], > 0
    double true_gain_bias = 1.0;     ///< actual / nominal power, > 0

    void validate() const;
};

/// A rack of interchangeable on/off devices whose per-unit draw derates
/// linearly with the number of units running: p(1) = solo_kw down to
/// p(all) = full_kw.
struct RackGroup {
    std::vector<std::pair<OnOffLoad, DeviceDynamics>> devices;
    double solo_kw = 0.0;
    double full_kw = 0.0;

    void validate() const;
};

/// Nonlinear aggregation: `levels` are the per-device first-order power
/// states (nominal scale, on and decaying-off alike), `on_count` the number
/// of devices currently commanded on.
double aggregate_rack_power(const RackGroup& group, int on_count, std::span<const double> levels);

enum class FaultKind { freeze, offline };

struct FaultEvent {
    double time = 0.0;
    std::string group;
    FaultKind kind = FaultKind::freeze;
};

/// Ornstein-Uhlenbeck disturbance on the uncontrollable load: stationary
/// standard deviation sigma [kW], correlation time [s].
struct NoiseSpec {
    double sigma = 0.0;
    double correlation_time = 5.0;
};

struct TargetProfile {
    enum class Kind { square, steps };
    Kind kind = Kind::square;
    // square wave: `low` until t_start, then alternating high/low half-periods
    double low = 0.0;
    double high = 0.0;
    double period = 0.0;
    double t_start = 0.0;
    // explicit step list: (time, value), ascending; value holds until the next
    std::vector<std::pair<double, double>> steps;

    double value_at(double t) const;
    void validate() const;
};

enum class GroupActuation {
    lumped,  ///< one first-order plant per group (the identified model)
    fleet,   ///< per-device on/off switching, rises, delays and derating
};

struct ContinuousDevice {
    ContinuousLoad load;
    DeviceDynamics dynamics;
};

struct ScenarioGroup {
    GroupModel model;  ///< true plant in `plant`, characterized gain in controller.h_nom
    GroupActuation actuation = GroupActuation::lumped;
    FleetSpec fleet;   ///< scheduler's view (lumped mode); derived in fleet mode
    std::vector<RackGroup> racks;              ///< fleet mode
    std::vector<ContinuousDevice> continuous;  ///< fleet mode

    FleetSpec scheduler_fleet() const;
    void validate() const;
};

struct SimGrid {
    double dt = 0.01;
    double duration = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Scenario {
    std::string name;
    std::vector<ScenarioGroup> groups;
    PIParams outer;
    TargetProfile target;
    double uncontrollable_base = 0.0;
    NoiseSpec noise;
    SimGrid grid;
    std::vector<FaultEvent> faults;
    double redispatch_threshold = 0.5;

    TwoLevelModel control_model() const;
    std::vector<FleetSpec> fleet_partition() const;
    void validate() const;
};

struct SimTrace {
    double dt = 0.0;
    std::vector<std::string> group_names;
    std::vector<double> t, target, aggregate, outer_cmd;
    std::vector<std::vector<double>> group_ref;    ///< [group][sample]
    std::vector<std::vector<double>> group_power;  ///< [group][sample]
    bool diverged = false;
    double diverged_at = 0.0;

    std::size_t size() const { return t.size(); }
};

/// Fixed-step closed-loop run: target profile -> coordinator -> delayed
/// commands -> device dynamics -> aggregation + noise -> feedback.
/// Deterministic for a given seed. Aborts (diverged flag, partial trace) when
/// |aggregate| exceeds 1e6 kW.
SimTrace simulate_closed_loop(const Scenario& scenario);

/// Scheduler-only dispatch, controllers bypassed: commands equal the
/// scheduled bases, refreshed when the target moves.
SimTrace simulate_open_loop(const Scenario& scenario);

struct DdeTrace {
    double dt = 0.0;
    std::vector<double> t;
    Eigen::MatrixXd x;  ///< row k = state at t[k]

    std::size_t size() const { return t.size(); }
};

/// RK4 with delayed states read from the stored history by cubic
/// interpolation. The history equals `history` on [-tau_max, 0); the state at
/// t = 0 is `initial` when given (else `history`). Requires
/// dt <= min(tau) / 10 and dt * L <= 0.5 for the Lipschitz bound L.
DdeTrace simulate_dde(const DelaySystem& sys, const Eigen::VectorXd& history, double duration,
                      double dt, const Eigen::VectorXd* initial = nullptr);

struct StepResponse {
    double dt = 0.0;
    std::vector<double> t;
    std::vector<double> y;
};

/// Output response of the loop to a step of the given magnitude applied at
/// t = 0 from rest, via the input-augmented delay system. Integrates with the
/// largest safe step not exceeding dt_max (see dde_max_step); the actual step
/// is reported in the result.
StepResponse dde_step_response(const LoopRealization& loop, double step, double duration,
                               double dt_max);

/// Largest safe simulate_dde step for this system (delay and rate guards),
/// clipped to dt_max.
double dde_max_step(const DelaySystem& sys, double dt_max);

}  // namespace drflex
