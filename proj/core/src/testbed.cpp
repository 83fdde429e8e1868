#include "drflex/testbed.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <set>
#include <stdexcept>

namespace drflex {

void DeviceDynamics::validate() const {
    if (!(comm_delay >= 0.0) || !std::isfinite(comm_delay))
        throw std::invalid_argument("device comm_delay must be >= 0");
    if (!(rise_time_constant > 0.0) || !std::isfinite(rise_time_constant))
        throw std::invalid_argument("device rise time constant must be > 0");
    if (!(true_gain_bias > 0.0) || !std::isfinite(true_gain_bias))
        throw std::invalid_argument("device gain bias must be > 0");
}

void RackGroup::validate() const {
    if (devices.empty()) throw std::invalid_argument("rack needs at least one device");
    if (!(full_kw > 0.0) || solo_kw < full_kw)
        throw std::invalid_argument("rack derating needs solo_kw >= full_kw > 0");
    for (const auto& [load, dyn] : devices) {
        if (!(load.nominal_power > 0.0))
            throw std::invalid_argument("rack device needs nominal power > 0");
        dyn.validate();
    }
}

double aggregate_rack_power(const RackGroup& group, int on_count,
                            std::span<const double> levels) {
    const int n_dev = static_cast<int>(group.devices.size());
    if (on_count < 0 || on_count > n_dev)
        throw std::invalid_argument("aggregate_rack_power: on_count out of range");
    if (static_cast<int>(levels.size()) != n_dev)
        throw std::invalid_argument("aggregate_rack_power: one level per device required");

    double sum = 0.0;
    for (double l : levels) sum += l;
    if (sum == 0.0) return 0.0;

    // per-unit draw derates linearly from solo_kw (one unit) to full_kw (all
    // units); decaying-off devices are counted at the current derating point
    const int n = std::max(on_count, 1);
    double per_unit = group.solo_kw;
    if (n_dev > 1)
        per_unit = group.solo_kw -
                   (group.solo_kw - group.full_kw) * static_cast<double>(n - 1) / (n_dev - 1);
    return sum * per_unit / group.full_kw;
}

double TargetProfile::value_at(double t) const {
    if (kind == Kind::square) {
        if (t < t_start) return low;
        const double phase = std::fmod(t - t_start, period);
        return phase < period / 2.0 ? high : low;
    }
    double value = steps.empty() ? 0.0 : steps.front().second;
    for (const auto& [time, v] : steps) {
        if (time <= t) value = v;
        else break;
    }
    return value;
}

void TargetProfile::validate() const {
    if (kind == Kind::square) {
        if (!(period > 0.0) || !std::isfinite(period))
            throw std::invalid_argument("square wave period must be > 0");
        if (!std::isfinite(low) || !std::isfinite(high) || t_start < 0.0)
            throw std::invalid_argument("square wave levels must be finite, t_start >= 0");
    } else {
        if (steps.empty()) throw std::invalid_argument("step profile needs at least one step");
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (!std::isfinite(steps[i].second))
                throw std::invalid_argument("step values must be finite");
            if (i > 0 && steps[i].first <= steps[i - 1].first)
                throw std::invalid_argument("step times must be ascending");
        }
    }
}

FleetSpec ScenarioGroup::scheduler_fleet() const {
    if (actuation == GroupActuation::lumped) return fleet;
    FleetSpec f;
    for (const auto& rack : racks)
        for (const auto& [load, dyn] : rack.devices) f.on_off.push_back(load);
    for (const auto& dev : continuous) f.continuous.push_back(dev.load);
    return f;
}

void ScenarioGroup::validate() const {
    model.validate();
    if (actuation == GroupActuation::fleet) {
        if (racks.empty() && continuous.empty())
            throw std::invalid_argument("fleet group '" + model.name + "' has no devices");
        for (const auto& r : racks) r.validate();
        for (const auto& dev : continuous) dev.dynamics.validate();
    }
    scheduler_fleet().validate();
}

void SimGrid::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("sim dt must be > 0");
    if (!(duration >= dt)) throw std::invalid_argument("sim duration must be >= dt");
}

TwoLevelModel Scenario::control_model() const {
    TwoLevelModel m;
    for (const auto& g : groups) m.groups.push_back(g.model);
    m.outer = outer;
    return m;
}

std::vector<FleetSpec> Scenario::fleet_partition() const {
    std::vector<FleetSpec> fleets;
    for (const auto& g : groups) fleets.push_back(g.scheduler_fleet());
    return fleets;
}

void Scenario::validate() const {
    grid.validate();
    target.validate();
    control_model().validate();
    std::set<std::string> names;
    for (const auto& g : groups) {
        g.validate();
        if (!names.insert(g.model.name).second)
            throw std::invalid_argument("duplicate group name '" + g.model.name + "'");
        if (grid.dt > g.model.controller.t_filter / 2.0)
            throw std::invalid_argument("group '" + g.model.name +
                                        "': sim dt must not exceed t_filter / 2");
    }
    for (const auto& f : faults) {
        if (!(f.time >= 0.0)) throw std::invalid_argument("fault time must be >= 0");
        if (!names.count(f.group))
            throw std::invalid_argument("fault references unknown group '" + f.group + "'");
    }
    if (!std::isfinite(uncontrollable_base) || noise.sigma < 0.0 ||
        !(noise.correlation_time > 0.0))
        throw std::invalid_argument("invalid uncontrollable load specification");
}

// ---------------------------------------------------------------------------
// DDE integration
// ---------------------------------------------------------------------------

namespace {

double lipschitz_bound(const DelaySystem& sys) {
    double l = sys.a0.cwiseAbs().rowwise().sum().maxCoeff();
    for (const auto& t : sys.terms) l += t.a.cwiseAbs().rowwise().sum().maxCoeff();
    return l;
}

// Reads x(td) from the stored trajectory: the constant history for td < 0,
// cubic Lagrange interpolation on the 4 surrounding grid rows otherwise.
struct HistoryReader {
    const Eigen::MatrixXd& rows;
    const Eigen::VectorXd& history;
    double dt;
    long known;  // highest valid row index

    Eigen::VectorXd at(double td) const {
        if (td < 0.0) return history;
        const double pos = td / dt;
        long j0 = static_cast<long>(std::floor(pos));
        if (static_cast<double>(j0) == pos && j0 <= known) return rows.row(j0).transpose();

        long base = std::min(std::max(j0 - 1, 0L), std::max(known - 3, 0L));
        const double s = pos - static_cast<double>(base);
        const double l0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
        const double l1 = s * (s - 2.0) * (s - 3.0) / 2.0;
        const double l2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
        const double l3 = s * (s - 1.0) * (s - 2.0) / 6.0;
        return l0 * rows.row(base).transpose() + l1 * rows.row(base + 1).transpose() +
               l2 * rows.row(base + 2).transpose() + l3 * rows.row(base + 3).transpose();
    }
};

}  // namespace

double dde_max_step(const DelaySystem& sys, double dt_max) {
    double dt = dt_max;
    for (const auto& t : sys.terms) dt = std::min(dt, t.tau / 10.0);
    const double l = lipschitz_bound(sys);
    if (l > 0.0) dt = std::min(dt, 0.5 / l);
    return dt;
}

DdeTrace simulate_dde(const DelaySystem& sys, const Eigen::VectorXd& history, double duration,
                      double dt, const Eigen::VectorXd* initial) {
    sys.validate();
    const int n = sys.dim();
    if (history.size() != n) throw std::invalid_argument("simulate_dde: history size != dim");
    if (!(dt > 0.0) || !(duration >= 0.0))
        throw std::invalid_argument("simulate_dde: need dt > 0 and duration >= 0");
    for (const auto& t : sys.terms)
        if (dt > t.tau / 10.0 * (1.0 + 1e-9))
            throw std::invalid_argument("simulate_dde: dt must be <= min(tau) / 10");
    const double l = lipschitz_bound(sys);
    if (dt * l > 0.5 * (1.0 + 1e-9))
        throw std::invalid_argument("simulate_dde: dt too large for the system rates");

    const long steps = std::lround(duration / dt);
    DdeTrace tr;
    tr.dt = dt;
    tr.t.resize(steps + 1);
    tr.x.resize(steps + 1, n);
    tr.x.row(0) = (initial ? *initial : history).transpose();
    tr.t[0] = 0.0;

    HistoryReader reader{tr.x, history, dt, 0};

    Eigen::VectorXd d1(n), d23(n), d4(n), k1(n), k2(n), k3(n), k4(n), xk(n);
    for (long k = 0; k < steps; ++k) {
        const double t = k * dt;
        reader.known = k;
        xk = tr.x.row(k).transpose();

        d1.setZero();
        d23.setZero();
        d4.setZero();
        for (const auto& term : sys.terms) {
            d1 += term.a * reader.at(t - term.tau);
            d23 += term.a * reader.at(t + 0.5 * dt - term.tau);
            d4 += term.a * reader.at(t + dt - term.tau);
        }

        k1 = sys.a0 * xk + d1;
        k2 = sys.a0 * (xk + 0.5 * dt * k1) + d23;
        k3 = sys.a0 * (xk + 0.5 * dt * k2) + d23;
        k4 = sys.a0 * (xk + dt * k3) + d4;

        tr.x.row(k + 1) = (xk + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).transpose();
        tr.t[k + 1] = (k + 1) * dt;
    }
    return tr;
}

StepResponse dde_step_response(const LoopRealization& loop, double step, double duration,
                               double dt_max) {
    const int n = loop.sys.dim();

    // augment the input as a constant extra state so the run is homogeneous
    Eigen::MatrixXd a0 = Eigen::MatrixXd::Zero(n + 1, n + 1);
    a0.topLeftCorner(n, n) = loop.sys.a0;
    a0.topRightCorner(n, 1) = loop.b0;
    std::vector<DelaySystem::Term> terms;
    for (std::size_t k = 0; k < loop.sys.terms.size(); ++k) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 1, n + 1);
        a.topLeftCorner(n, n) = loop.sys.terms[k].a;
        a.topRightCorner(n, 1) = loop.b_delayed[k];
        terms.push_back({std::move(a), loop.sys.terms[k].tau});
    }
    DelaySystem aug = make_delay_system(std::move(a0), std::move(terms));

    Eigen::VectorXd history = Eigen::VectorXd::Zero(n + 1);
    Eigen::VectorXd initial = Eigen::VectorXd::Zero(n + 1);
    initial(n) = step;

    // land exactly on `duration` with the largest safe uniform step
    const double dt_safe = dde_max_step(aug, dt_max);
    const long steps = std::max(1L, static_cast<long>(std::ceil(duration / dt_safe - 1e-12)));
    const double dt = duration / static_cast<double>(steps);
    const DdeTrace tr = simulate_dde(aug, history, duration, dt, &initial);
    StepResponse out;
    out.dt = dt;
    out.t = tr.t;
    out.y.resize(tr.size());
    for (std::size_t k = 0; k < tr.size(); ++k)
        out.y[k] = (loop.c * tr.x.row(k).head(n).transpose())(0) + loop.d * step;
    return out;
}

// ---------------------------------------------------------------------------
// Device-level simulation
// ---------------------------------------------------------------------------

namespace {

// fixed-capacity ring holding the command stream so device dead times can be
// honored exactly on the simulation grid; expects one push per step
class CommandRing {
public:
    CommandRing(long delay_steps, double initial)
        : delay_(std::max(0L, delay_steps)),
          initial_(initial),
          buf_(static_cast<std::size_t>(delay_) + 1, initial) {}

    void push(long k, double value) { buf_[slot(k)] = value; }

    double delayed(long k) const {
        const long j = k - delay_;
        return j < 0 ? initial_ : buf_[slot(j)];
    }

private:
    std::size_t slot(long k) const {
        return static_cast<std::size_t>(k % static_cast<long>(buf_.size()));
    }
    long delay_;
    double initial_;
    std::vector<double> buf_;
};

struct OnOffDeviceSim {
    std::string id;
    double nominal = 0.0;
    DeviceDynamics dyn;
    CommandRing commands;  // 0/1 status stream
    double level = 0.0;    // first-order power state, nominal scale
    bool physically_on = false;
    double assigned = 0.0;  // open-loop status from the scheduler
};

struct ContinuousDeviceSim {
    ContinuousLoad load;
    DeviceDynamics dyn;
    CommandRing commands;  // setpoint stream [kW]
    double level = 0.0;
    double assigned = 0.0;
};

struct RackSim {
    const RackGroup* cfg = nullptr;
    std::vector<std::size_t> device_index;  // into the group's on/off pool
};

// One group's physical side: either the lumped identified plant or the
// device fleet with switching, rises and derating.
struct GroupSim {
    const ScenarioGroup* cfg = nullptr;
    double dt = 0.0;
    bool frozen = false;
    bool offline = false;

    // lumped
    double lumped_power = 0.0;
    CommandRing lumped_cmd{0, 0.0};

    // fleet
    std::vector<OnOffDeviceSim> on_off;
    std::vector<ContinuousDeviceSim> cont;
    std::vector<RackSim> racks;
    int commanded_on = 0;
    std::vector<double> cum_nominal;  // cumulative nominal power, fleet order

    double power() const;
    void command(double u, long k);
    void load_assignment(const Assignment& a);  // caches per-device targets
    void push_assigned(long k);                 // streams the cached targets
    void advance(long k);
};

double GroupSim::power() const {
    if (offline) return 0.0;
    if (cfg->actuation == GroupActuation::lumped) return lumped_power;

    double p = 0.0;
    std::vector<double> levels;
    for (const auto& rack : racks) {
        levels.clear();
        int n_on = 0;
        for (std::size_t idx : rack.device_index) {
            levels.push_back(on_off[idx].level);
            if (on_off[idx].physically_on) ++n_on;
        }
        p += aggregate_rack_power(*rack.cfg, n_on, levels);
    }
    for (const auto& dev : cont) p += dev.level;
    return p;
}

void GroupSim::command(double u, long k) {
    if (cfg->actuation == GroupActuation::lumped) {
        lumped_cmd.push(k, u);
        return;
    }

    // split the group command between the on/off ensemble and the continuous
    // loads: pick the on-count whose nominal sum leaves the continuous loads
    // nearest mid-range, with hysteresis of a quarter device per switch
    double c_min = 0.0, c_max = 0.0;
    for (const auto& dev : cont) {
        c_min += dev.load.v_min;
        c_max += dev.load.v_max;
    }
    const double c_mid = (c_min + c_max) / 2.0;
    const int n_dev = static_cast<int>(on_off.size());

    auto mismatch = [&](int n) { return std::abs(u - cum_nominal[n] - c_mid); };
    int n = commanded_on;
    while (n < n_dev) {
        const double hyst = 0.25 * on_off[n].nominal;
        if (mismatch(n + 1) + hyst < mismatch(n)) ++n;
        else break;
    }
    while (n > 0) {
        const double hyst = 0.25 * on_off[n - 1].nominal;
        if (mismatch(n - 1) + hyst < mismatch(n)) --n;
        else break;
    }
    commanded_on = n;
    for (int i = 0; i < n_dev; ++i) on_off[i].commands.push(k, i < n ? 1.0 : 0.0);

    double remaining = std::clamp(u - cum_nominal[n], c_min, c_max) - c_min;
    for (auto& dev : cont) {
        const double extra = std::clamp(remaining, 0.0, dev.load.v_max - dev.load.v_min);
        dev.commands.push(k, dev.load.v_min + extra);
        remaining -= extra;
    }
}

void GroupSim::load_assignment(const Assignment& a) {
    if (cfg->actuation == GroupActuation::lumped) return;  // handled via command()
    int n_on = 0;
    for (auto& dev : on_off) {
        auto it = a.statuses.find(dev.id);
        dev.assigned = (it != a.statuses.end() && it->second != 0) ? 1.0 : 0.0;
        if (dev.assigned != 0.0) ++n_on;
    }
    commanded_on = n_on;
    for (auto& dev : cont) {
        auto it = a.setpoints.find(dev.load.id);
        dev.assigned = it != a.setpoints.end() ? it->second : dev.load.v_min;
    }
}

void GroupSim::push_assigned(long k) {
    for (auto& dev : on_off) dev.commands.push(k, dev.assigned);
    for (auto& dev : cont) dev.commands.push(k, dev.assigned);
}

void GroupSim::advance(long k) {
    if (frozen || offline) return;  // holds last power / stays at zero

    if (cfg->actuation == GroupActuation::lumped) {
        const double u = lumped_cmd.delayed(k);
        const double h = cfg->model.plant.gain;
        const double alpha = 1.0 - std::exp(-dt / cfg->model.plant.time_constant);
        lumped_power += alpha * (h * u - lumped_power);
        return;
    }

    for (auto& dev : on_off) {
        dev.physically_on = dev.commands.delayed(k) != 0.0;
        const double target = dev.physically_on ? dev.nominal * dev.dyn.true_gain_bias : 0.0;
        const double alpha = 1.0 - std::exp(-dt / dev.dyn.rise_time_constant);
        dev.level += alpha * (target - dev.level);
    }
    for (auto& dev : cont) {
        const double target = dev.commands.delayed(k) * dev.dyn.true_gain_bias;
        const double alpha = 1.0 - std::exp(-dt / dev.dyn.rise_time_constant);
        dev.level += alpha * (target - dev.level);
    }
}

GroupSim make_group_sim(const ScenarioGroup& g, double dt) {
    GroupSim sim;
    sim.cfg = &g;
    sim.dt = dt;
    if (g.actuation == GroupActuation::lumped) {
        sim.lumped_cmd = CommandRing(std::lround(g.model.delay / dt), 0.0);
        return sim;
    }

    for (const auto& rack : g.racks) {
        RackSim rs;
        rs.cfg = &rack;
        for (const auto& [load, dyn] : rack.devices) {
            rs.device_index.push_back(sim.on_off.size());
            sim.on_off.push_back(OnOffDeviceSim{
                load.id, load.nominal_power, dyn,
                CommandRing(std::lround(dyn.comm_delay / dt), 0.0), 0.0, false, 0.0});
        }
        sim.racks.push_back(std::move(rs));
    }
    for (const auto& dev : g.continuous)
        sim.cont.push_back(ContinuousDeviceSim{
            dev.load, dev.dynamics, CommandRing(std::lround(dev.dynamics.comm_delay / dt), 0.0),
            0.0, 0.0});

    sim.cum_nominal.assign(sim.on_off.size() + 1, 0.0);
    for (std::size_t i = 0; i < sim.on_off.size(); ++i)
        sim.cum_nominal[i + 1] = sim.cum_nominal[i] + sim.on_off[i].nominal;
    return sim;
}

// running mean over the last `window` pushed samples
class MovingAverage {
public:
    explicit MovingAverage(std::size_t window) : window_(std::max<std::size_t>(1, window)) {}

    double push(double v) {
        buf_.push_back(v);
        sum_ += v;
        if (buf_.size() > window_) {
            sum_ -= buf_.front();
            buf_.pop_front();
        }
        return sum_ / static_cast<double>(buf_.size());
    }

private:
    std::size_t window_;
    std::deque<double> buf_;
    double sum_ = 0.0;
};

SimTrace run_simulation(const Scenario& sc, bool closed_loop) {
    sc.validate();
    const double dt = sc.grid.dt;
    const long steps = std::lround(sc.grid.duration / dt);
    const std::size_t m = sc.groups.size();

    CoordinatorConfig cfg;
    cfg.model = sc.control_model();
    cfg.fleets = sc.fleet_partition();
    cfg.redispatch_threshold = sc.redispatch_threshold;
    CoordinatorState cst = make_coordinator_state(cfg);

    std::vector<GroupSim> sims;
    for (const auto& g : sc.groups) sims.push_back(make_group_sim(g, dt));

    // open-loop dispatch state
    bool ol_dispatched = false;
    double ol_target = 0.0;

    std::mt19937_64 rng(sc.grid.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double ou_decay = std::exp(-dt / sc.noise.correlation_time);
    const double ou_scale = sc.noise.sigma * std::sqrt(1.0 - ou_decay * ou_decay);
    double q_dev = 0.0;

    MovingAverage q_estimator(static_cast<std::size_t>(std::lround(10.0 / dt)));

    SimTrace tr;
    tr.dt = dt;
    for (const auto& g : sc.groups) tr.group_names.push_back(g.model.name);
    tr.group_ref.resize(m);
    tr.group_power.resize(m);

    std::vector<FaultEvent> faults = sc.faults;
    std::stable_sort(faults.begin(), faults.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.time < b.time; });
    std::size_t next_fault = 0;

    std::vector<double> measurements(m), commands(m), refs(m);
    for (long k = 0; k <= steps; ++k) {
        const double t = k * dt;

        while (next_fault < faults.size() && faults[next_fault].time <= t) {
            for (auto& sim : sims) {
                if (sim.cfg->model.name != faults[next_fault].group) continue;
                if (faults[next_fault].kind == FaultKind::freeze) sim.frozen = true;
                else sim.offline = true;
            }
            ++next_fault;
        }

        const double tgt = sc.target.value_at(t);
        for (std::size_t i = 0; i < m; ++i) measurements[i] = sims[i].power();
        const double q_true = sc.uncontrollable_base + q_dev;
        double obs = q_true;
        for (double v : measurements) obs += v;
        const double q_hat = q_estimator.push(q_true);

        double outer_cmd = 0.0;
        if (closed_loop) {
            commands = coordinator_step(cst, cfg, tgt, measurements, q_hat, dt);
            refs = cst.group_refs;
            outer_cmd = cst.outer.last_output;
        } else {
            // scheduler-only dispatch straight onto the devices
            if (!ol_dispatched || std::abs(tgt - ol_target) > sc.redispatch_threshold) {
                coordinator_dispatch(cst, cfg, tgt, q_hat);
                for (auto& sim : sims) sim.load_assignment(cst.current_assignment);
                ol_dispatched = true;
                ol_target = tgt;
            }
            commands = cst.group_bases;
            refs = cst.group_bases;
        }

        if (!std::isfinite(obs) || std::abs(obs) > 1e6) {
            tr.diverged = true;
            tr.diverged_at = t;
            break;
        }

        tr.t.push_back(t);
        tr.target.push_back(tgt);
        tr.aggregate.push_back(obs);
        tr.outer_cmd.push_back(outer_cmd);
        for (std::size_t i = 0; i < m; ++i) {
            tr.group_ref[i].push_back(refs[i]);
            tr.group_power[i].push_back(measurements[i]);
        }
        if (k == steps) break;

        for (std::size_t i = 0; i < m; ++i) {
            auto& sim = sims[i];
            if (!closed_loop && sim.cfg->actuation == GroupActuation::fleet)
                sim.push_assigned(k);
            else
                sim.command(commands[i], k);
            sim.advance(k);
        }
        if (sc.noise.sigma > 0.0) q_dev = q_dev * ou_decay + ou_scale * gauss(rng);
    }
    return tr;
}

}  // namespace

SimTrace simulate_closed_loop(const Scenario& scenario) { return run_simulation(scenario, true); }

SimTrace simulate_open_loop(const Scenario& scenario) { return run_simulation(scenario, false); }

}  // namespace drflex
