#include "drflex/controllers.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace drflex {

double pi_step(PIState& state, const PIParams& params, double error, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("pi_step: dt must be > 0");

    double out = params.kp * error + state.integrator;
    bool sat_hi = false, sat_lo = false;
    if (state.limits) {
        if (out >= state.limits->hi) {
            out = state.limits->hi;
            sat_hi = true;
        } else if (out <= state.limits->lo) {
            out = state.limits->lo;
            sat_lo = true;
        }
    }
    if (!((sat_hi && error > 0.0) || (sat_lo && error < 0.0))) {
        const double before = state.integrator;
        state.integrator += params.ki * error * dt;
        if (state.limits) {
            // cap the increment where the unsaturated output reaches the
            // limit; never drag the integrator backwards
            if (error > 0.0)
                state.integrator = std::min(
                    state.integrator,
                    std::max(before, state.limits->hi - params.kp * error));
            else if (error < 0.0)
                state.integrator = std::max(
                    state.integrator,
                    std::min(before, state.limits->lo - params.kp * error));
        }
    }

    state.last_output = out;
    return out;
}

double ffpi_step(FFPIState& state, const FFPIParams& params, double reference,
                 double measurement, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("ffpi_step: dt must be > 0");
    if (dt > params.t_filter / 2.0)
        throw std::invalid_argument("ffpi_step: dt must not exceed t_filter / 2");

    const double c0 = params.t_ff / (params.h_nom * params.t_filter);
    const double c1 = (1.0 - params.t_ff / params.t_filter) / params.h_nom;
    const double ff = c0 * reference + c1 * state.ff_filter;

    // the limits apply to the combined command, so shift them for the PI part
    const std::optional<Limits> saved = state.pi.limits;
    if (saved) state.pi.limits = Limits{saved->lo - ff, saved->hi - ff};
    const double command = pi_step(state.pi, params.pi, reference - measurement, dt) + ff;
    state.pi.limits = saved;

    // trapezoidal advance of w' = (r - w) / t_filter, reference held over dt
    const double a = dt / (2.0 * params.t_filter);
    state.ff_filter = ((1.0 - a) * state.ff_filter + 2.0 * a * reference) / (1.0 + a);

    return command;
}

void CoordinatorConfig::validate() const {
    model.validate();
    if (fleets.size() != model.groups.size())
        throw std::invalid_argument("coordinator: one fleet per group required");
    if (!group_limits.empty() && group_limits.size() != model.groups.size())
        throw std::invalid_argument("coordinator: group_limits must match group count");
    merged_fleet().validate();  // also checks cross-group id uniqueness
    if (!(redispatch_threshold >= 0.0))
        throw std::invalid_argument("coordinator: redispatch threshold must be >= 0");
}

FleetSpec CoordinatorConfig::merged_fleet() const {
    FleetSpec all;
    for (const auto& f : fleets) {
        all.on_off.insert(all.on_off.end(), f.on_off.begin(), f.on_off.end());
        all.continuous.insert(all.continuous.end(), f.continuous.begin(), f.continuous.end());
    }
    return all;
}

CoordinatorState make_coordinator_state(const CoordinatorConfig& cfg) {
    cfg.validate();
    const std::size_t m = cfg.model.groups.size();

    CoordinatorState st;
    st.inner.resize(m);
    st.group_refs.assign(m, 0.0);
    st.group_bases.assign(m, 0.0);

    double total_capacity = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double cap = cfg.fleets[i].capacity();
        total_capacity += cap;
        if (!cfg.group_limits.empty())
            st.inner[i].pi.limits = cfg.group_limits[i];
        else if (cap > 0.0)
            st.inner[i].pi.limits = Limits{0.0, cap};
    }
    if (total_capacity > 0.0) st.outer.limits = Limits{-total_capacity, total_capacity};
    return st;
}

namespace {

double group_power_of(const Assignment& a, const FleetSpec& fleet) {
    double p = 0.0;
    for (const auto& d : fleet.on_off) {
        auto it = a.statuses.find(d.id);
        if (it != a.statuses.end() && it->second != 0) p += d.nominal_power;
    }
    for (const auto& d : fleet.continuous) {
        auto it = a.setpoints.find(d.id);
        if (it != a.setpoints.end()) p += it->second;
    }
    return p;
}

}  // namespace

void coordinator_dispatch(CoordinatorState& st, const CoordinatorConfig& cfg, double target,
                          double q_hat) {
    const FleetSpec all = cfg.merged_fleet();
    try {
        const Assignment* prev = st.dispatched ? &st.current_assignment : nullptr;
        st.current_assignment = schedule(all, target, q_hat, prev);
        for (std::size_t i = 0; i < cfg.fleets.size(); ++i)
            st.group_bases[i] = group_power_of(st.current_assignment, cfg.fleets[i]);
    } catch (const InfeasibleScheduleError& e) {
        // fall back to the fleet's minimum feasible point: binaries off,
        // continuous loads at their lower bounds
        Assignment a;
        for (const auto& d : all.on_off) a.statuses[d.id] = 0;
        for (const auto& d : all.continuous) a.setpoints[d.id] = d.v_min;
        a.total_power = a.objective = all.v_min_total();
        a.optimal = false;
        st.current_assignment = a;
        for (std::size_t i = 0; i < cfg.fleets.size(); ++i)
            st.group_bases[i] = cfg.fleets[i].v_min_total();
        std::ostringstream msg;
        msg << "dispatch at target " << target << " kW infeasible (" << e.what()
            << "); holding minimum feasible point";
        st.events.push_back(msg.str());
    }
    st.dispatched_target = target;
    st.dispatched = true;
}

std::vector<double> coordinator_step(CoordinatorState& st, const CoordinatorConfig& cfg,
                                     double target, std::span<const double> group_measurements,
                                     double uncontrollable_estimate, double dt) {
    const std::size_t m = cfg.model.groups.size();
    if (group_measurements.size() != m)
        throw std::invalid_argument("coordinator_step: one measurement per group required");
    if (!(dt > 0.0)) throw std::invalid_argument("coordinator_step: dt must be > 0");

    if (!st.dispatched || std::abs(target - st.dispatched_target) > cfg.redispatch_threshold)
        coordinator_dispatch(st, cfg, target, uncontrollable_estimate);

    double measured_total = uncontrollable_estimate;
    for (double v : group_measurements) measured_total += v;
    const double delta = pi_step(st.outer, cfg.model.outer, target - measured_total, dt);

    std::vector<double> commands(m);
    for (std::size_t i = 0; i < m; ++i) {
        st.group_refs[i] = st.group_bases[i] + cfg.model.groups[i].participation * delta;
        commands[i] = ffpi_step(st.inner[i], cfg.model.groups[i].controller, st.group_refs[i],
                                group_measurements[i], dt);
    }
    return commands;
}

}  // namespace drflex
