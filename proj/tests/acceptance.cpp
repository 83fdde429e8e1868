// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code is the number of failures.

#include "drflex/analysis.hpp"
#include "drflex/io.hpp"
#include "drflex/model.hpp"
#include "drflex/scenario_io.hpp"
#include "drflex/scheduler.hpp"
#include "drflex/stability.hpp"
#include "drflex/testbed.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace drflex;
using clock_t_ = std::chrono::steady_clock;

namespace {

int failures = 0;

struct Criterion {
    const char* name;
    clock_t_::time_point start = clock_t_::now();
    bool ok = true;
    std::ostringstream detail;

    explicit Criterion(const char* n) : name(n) {}

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what;
        }
    }

    ~Criterion() {
        const double secs = std::chrono::duration<double>(clock_t_::now() - start).count();
        std::printf("%s  %-28s (%.2f s)%s%s\n", ok ? "PASS" : "FAIL", name, secs,
                    detail.str().empty() ? "" : "  ", detail.str().c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

DelaySystem scalar_delay(double k) {
    Eigen::MatrixXd a0(1, 1), a1(1, 1);
    a0 << 0.0;
    a1 << -k;
    return make_delay_system(a0, {{a1, 1.0}});
}

Scenario quiet_default() {
    Scenario sc = default_scenario();
    sc.noise.sigma = 0.0;
    return sc;
}

void criterion_1_dde_oracle() {
    Criterion c("1 dde-eigenvalue-oracle");
    const DelaySystem sys = scalar_delay(1.0);
    const std::complex<double> oracle = oracles::scalar_delay_rightmost(1.0);

    const auto t0 = clock_t_::now();
    const StabilityReport rep = stability_index(sys);
    const double secs = std::chrono::duration<double>(clock_t_::now() - t0).count();
    c.require(secs < 1.0, "runtime " + fmt(secs) + " s >= 1 s");
    c.require(rep.converged, "refinement did not converge");
    c.require(std::abs(rep.index - (-0.31813)) < 1e-5,
              "index " + fmt(rep.index) + " != -0.31813 +- 1e-5");
    c.require(std::abs(std::abs(rep.rightmost.imag()) - 1.33724) < 1e-5,
              "imag " + fmt(rep.rightmost.imag()) + " != 1.33724 +- 1e-5");
    c.require(std::abs(rep.index - oracle.real()) < 1e-5, "index disagrees with the oracle");
    c.require(std::abs(std::abs(rep.rightmost.imag()) - oracle.imag()) < 1e-5,
              "imag disagrees with the oracle");

    // spectral convergence of the raw discretization toward the oracle root
    double prev = 1e300, last = 0.0;
    for (int n : {8, 12, 16, 20}) {
        StabilityOptions opts;
        opts.n = n;
        const auto r = stability_index(sys, opts);
        std::complex<double> raw(r.raw_rightmost.real(), std::abs(r.raw_rightmost.imag()));
        last = std::abs(raw - oracle);
        c.require(last <= std::max(prev, 1e-12),
                  "error not monotone at N=" + std::to_string(n));
        prev = last;
    }
    c.require(last < 1e-8, "final discretization error " + fmt(last) + " >= 1e-8");
}

void criterion_2_boundary() {
    Criterion c("2 analytic-boundary");
    const StabilityReport rep = stability_index(scalar_delay(M_PI / 2.0));
    c.require(rep.converged, "did not converge");
    c.require(std::abs(rep.index) < 1e-6, "|index| = " + fmt(std::abs(rep.index)) + " >= 1e-6");
}

void criterion_3_scheduler() {
    Criterion c("3 scheduler-oracle");

    std::mt19937_64 rng(424242);
    std::uniform_int_distribution<int> nb(0, 15), ncont(0, 5), quarters(1, 32);
    int feasible = 0;
    for (int trial = 0; trial < 200; ++trial) {
        FleetSpec f;
        const int n_bin = nb(rng), n_cont = ncont(rng);
        for (int i = 0; i < n_bin; ++i)
            f.on_off.push_back({"b" + std::to_string(i), 0.25 * quarters(rng)});
        for (int i = 0; i < n_cont; ++i) {
            const double lo = 0.25 * (quarters(rng) - 1);
            f.continuous.push_back({"c" + std::to_string(i), lo, lo + 0.25 * quarters(rng)});
        }
        std::uniform_real_distribution<double> budget(0.0, f.capacity() + 2.0);
        const double target = budget(rng);
        bool ia = false, ib = false;
        Assignment a, b;
        try {
            a = schedule(f, target, 0.0);
        } catch (const InfeasibleScheduleError&) {
            ia = true;
        }
        try {
            b = brute_force_schedule(f, target, 0.0);
        } catch (const InfeasibleScheduleError&) {
            ib = true;
        }
        if (ia != ib) {
            c.require(false, "feasibility mismatch on trial " + std::to_string(trial));
            return;
        }
        if (ia) continue;
        ++feasible;
        if (a.objective != b.objective) {
            c.require(false, "objective mismatch on trial " + std::to_string(trial) + ": " +
                                 fmt(a.objective) + " vs " + fmt(b.objective));
            return;
        }
    }
    c.require(feasible >= 100, "too few feasible instances");

    // 91-binary fleet solve time, median over 21 calls
    const FleetSpec fleet = default_fleet();
    std::vector<double> times;
    for (int i = 0; i < 21; ++i) {
        const double target = 30.0 + 2.0 * i;
        const auto t0 = clock_t_::now();
        schedule(fleet, target, 0.0);
        times.push_back(std::chrono::duration<double>(clock_t_::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    c.require(median < 0.1, "91-binary median " + fmt(median) + " s >= 0.1 s");
    c.detail << (c.detail.str().empty() ? "" : "; ") << "median " << fmt(median * 1e3) << " ms";
}

void criterion_4_zero_ss_error() {
    Criterion c("4 zero-steady-state-error");
    const Scenario sc = quiet_default();

    const auto rep = stability_index(assemble_full_system(sc.control_model()).sys);
    c.require(rep.converged && rep.index < 0.0,
              "stock design point not stable: index " + fmt(rep.index));

    const SimTrace closed = simulate_closed_loop(sc);
    const SimTrace open = simulate_open_loop(sc);
    c.require(!closed.diverged && !open.diverged, "simulation diverged");

    const auto events = find_step_events(closed);
    c.require(events.size() == 4, "expected 4 target steps");
    for (const auto& ev : events) {
        const auto m = response_metrics(closed, ev);
        c.require(m.ss_error < 0.001 * 14.0,
                  "hold at t=" + fmt(ev.time) + ": ss error " + fmt(m.ss_error) + " kW");
        c.require(std::isfinite(m.ramp_time) && m.ramp_time < 30.0,
                  "hold at t=" + fmt(ev.time) + ": ramp " + fmt(m.ramp_time));
    }

    const auto m_closed = response_metrics(closed, events.front());
    const auto open_events = find_step_events(open);
    const auto m_open = response_metrics(open, open_events.front());
    c.require(m_closed.initial_response < m_open.initial_response,
              "closed init " + fmt(m_closed.initial_response) + " !< open init " +
                  fmt(m_open.initial_response));
    c.require(std::isinf(m_open.ramp_time), "open-loop ramp finite");
    c.detail << (c.detail.str().empty() ? "" : "; ") << "init " << fmt(m_closed.initial_response)
             << "/" << fmt(m_open.initial_response) << " s, ramp "
             << fmt(m_closed.ramp_time) << " s";
}

void criterion_5_ffpi_advantage() {
    Criterion c("5 feed-forward-advantage");
    const auto t0 = clock_t_::now();

    GroupModel g;
    g.name = "fig3";
    g.plant = {1.2, 5.0};
    g.delay = 0.0;
    g.controller = make_ffpi({1.0, 1.0}, 3.5, 1.0);  // T' = 3.5, h' = 1, Tf = 0.35
    g.participation = 1.0;

    const LoopRealization ff = assemble_inner_loop(g);
    const LoopRealization pi = assemble_classical_pi_loop(g.plant, g.controller.pi, 0.0);
    c.require(std::abs(ff.dc_gain() - 1.0) < 1e-6, "ff dc gain != 1");
    c.require(std::abs(pi.dc_gain() - 1.0) < 1e-6, "pi dc gain != 1");

    const StepResponse rf = dde_step_response(ff, 1.0, 100.0, 0.01);
    const StepResponse rp = dde_step_response(pi, 1.0, 100.0, 0.01);
    const double h2f = h2_metric(rf.t, rf.y, 1.0, 100.0);
    const double h2p = h2_metric(rp.t, rp.y, 1.0, 100.0);
    c.require(h2f < h2p, "h2 " + fmt(h2f) + " !< " + fmt(h2p));

    const double secs = std::chrono::duration<double>(clock_t_::now() - t0).count();
    c.require(secs < 1.0, "runtime " + fmt(secs) + " s >= 1 s");
    c.detail << "h2 " << fmt(h2f) << " vs " << fmt(h2p);
}

void criterion_6_stability_sweep() {
    Criterion c("6 stability-sweep");
    GroupModel rack = default_scenario().groups[0].model;

    auto builder = [&](double kp, double ki) {
        GroupModel g = rack;
        g.controller.pi = {kp, ki};
        return assemble_inner_loop(g);
    };
    const auto ends = parameter_sweep(builder, std::vector<double>{0.2},
                                      std::vector<double>{0.05, 1.0}, stability_index_metric());
    c.require(ends.at(0, 0) < 0.0, "index(ki=0.05) = " + fmt(ends.at(0, 0)) + " !< 0");
    c.require(ends.at(0, 1) > 0.0, "index(ki=1.0) = " + fmt(ends.at(0, 1)) + " !> 0");

    std::vector<double> kp_grid, ki_grid;
    for (int i = 0; i < 21; ++i) {
        kp_grid.push_back(0.02 + 0.03 * i);
        ki_grid.push_back(0.02 + 0.06 * i);
    }
    const auto t0 = clock_t_::now();
    const auto grid = parameter_sweep(builder, kp_grid, ki_grid, stability_index_metric(), 0);
    const double secs = std::chrono::duration<double>(clock_t_::now() - t0).count();
    c.require(grid.values.size() == 441, "grid size");
    c.require(secs < 60.0, "21x21 sweep took " + fmt(secs) + " s");
    bool has_neg = false, has_pos = false;
    for (double v : grid.values) (v < 0.0 ? has_neg : has_pos) = true;
    c.require(has_neg && has_pos, "sweep misses a stability boundary");
    c.detail << "sweep " << fmt(secs) << " s";
}

void criterion_7_monte_carlo() {
    Criterion c("7 monte-carlo-robustness");
    const TwoLevelModel model = default_scenario().control_model();
    const auto t0 = clock_t_::now();
    MonteCarloOptions opts;
    opts.jobs = 0;

    const std::filesystem::path tmp =
        std::filesystem::temp_directory_path() / "drflex_acceptance";
    std::filesystem::create_directories(tmp);
    std::vector<std::string> names{"racks", "hvac", "pv"};

    for (auto kind : {UncertaintyKind::gain, UncertaintyKind::delay}) {
        const char* label = kind == UncertaintyKind::gain ? "gain" : "delay";
        const auto a = monte_carlo(model, kind, 0.20, 1000, 2026, opts);
        c.require(a.failures == 0, std::string(label) + ": " + std::to_string(a.failures) +
                                       " samples failed");
        c.require(a.stable_fraction == 1.0,
                  std::string(label) + ": stable fraction " + fmt(a.stable_fraction));

        const auto b = monte_carlo(model, kind, 0.20, 1000, 2026, opts);
        write_monte_carlo_csv(tmp / "a.csv", a, names);
        write_monte_carlo_csv(tmp / "b.csv", b, names);
        std::ifstream fa(tmp / "a.csv", std::ios::binary), fb(tmp / "b.csv", std::ios::binary);
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        c.require(sa.str() == sb.str(), std::string(label) + ": rerun not byte-identical");
    }
    const double secs = std::chrono::duration<double>(clock_t_::now() - t0).count();
    c.require(secs < 300.0, "runtime " + fmt(secs) + " s >= 300 s");
    c.detail << "runtime " << fmt(secs) << " s";
}

void criterion_8_bode_margins() {
    Criterion c("8 bode-margins");
    const TwoLevelModel model = default_scenario().control_model();
    std::vector<double> taus;
    for (int i = 0; i <= 10; ++i) taus.push_back(i);
    const auto sweep = margin_sweep(model, taus);

    for (std::size_t i = 1; i < sweep.size(); ++i) {
        c.require(sweep[i].second.gain_margin <= sweep[i - 1].second.gain_margin * (1 + 1e-9),
                  "gain margin rises at tau=" + fmt(taus[i]));
        c.require(
            sweep[i].second.phase_margin_deg <= sweep[i - 1].second.phase_margin_deg * (1 + 1e-9),
            "phase margin rises at tau=" + fmt(taus[i]));
    }
    for (const auto& [tau, rep] : sweep) {
        TwoLevelModel common = model;
        for (auto& g : common.groups) g.delay = tau;
        const auto sr = stability_index(assemble_full_system(common).sys);
        const bool margins_positive = rep.gain_margin > 1.0 && rep.phase_margin_deg > 0.0;
        c.require(margins_positive == (sr.index < 0.0), "sign mismatch at tau=" + fmt(tau));
    }
}

void criterion_9_cross_validation() {
    Criterion c("9 cross-validation");

    // device simulator vs linear delay model in the linear-consistent setup
    Scenario sc = quiet_default();
    sc.redispatch_threshold = 1e9;
    sc.target.kind = TargetProfile::Kind::steps;
    sc.target.steps = {{0.0, 40.0}, {200.0, 54.0}};
    sc.grid.duration = 320.0;
    sc.grid.dt = 0.005;
    const SimTrace a = simulate_closed_loop(sc);
    const StepResponse b =
        dde_step_response(assemble_full_system(sc.control_model()), 14.0, 120.0, 0.004);

    std::size_t i_step = 0;
    while (a.t[i_step] < 200.0) ++i_step;
    const double y_pre = a.aggregate[i_step];
    double worst = 0.0;
    for (double ts = 0.0; ts <= 119.0; ts += 0.25) {
        const std::size_t ia = i_step + static_cast<std::size_t>(std::lround(ts / sc.grid.dt));
        const std::size_t ib = static_cast<std::size_t>(std::lround(ts / b.dt));
        worst = std::max(worst, std::abs((a.aggregate[ia] - y_pre) - b.y[ib]));
    }
    c.require(worst < 0.01 * 14.0, "sup-norm gap " + fmt(worst) + " kW >= 1% of the step");

    // method of steps: x' = -x(t-1) against the closed form
    const DdeTrace tr = simulate_dde(scalar_delay(1.0), Eigen::VectorXd::Ones(1), 2.0, 0.001);
    double err = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const double t = tr.t[k];
        const double exact =
            t <= 1.0 ? 1.0 - t : 1.0 - t + 0.5 * (t - 1.0) * (t - 1.0);
        err = std::max(err, std::abs(tr.x(k, 0) - exact));
    }
    c.require(err < 1e-6, "method-of-steps error " + fmt(err));
    c.detail << "sim/dde gap " << fmt(worst) << " kW, steps err " << fmt(err);
}

void criterion_10_determinism() {
    Criterion c("10 determinism");
    Scenario sc = default_scenario();  // noise on, seed 42
    sc.grid.duration = 200.0;

    const std::filesystem::path tmp =
        std::filesystem::temp_directory_path() / "drflex_acceptance";
    std::filesystem::create_directories(tmp);
    write_trace_csv(tmp / "t1.csv", simulate_closed_loop(sc));
    write_trace_csv(tmp / "t2.csv", simulate_closed_loop(sc));

    std::ifstream f1(tmp / "t1.csv", std::ios::binary), f2(tmp / "t2.csv", std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    c.require(s1.str() == s2.str() && !s1.str().empty(), "trace CSVs differ");
}

}  // namespace

int main() {
    std::printf("acceptance criteria\n-------------------\n");
    criterion_1_dde_oracle();
    criterion_2_boundary();
    criterion_3_scheduler();
    criterion_4_zero_ss_error();
    criterion_5_ffpi_advantage();
    criterion_6_stability_sweep();
    criterion_7_monte_carlo();
    criterion_8_bode_margins();
    criterion_9_cross_validation();
    criterion_10_determinism();
    std::printf("-------------------\n%s\n", failures == 0 ? "all criteria passed"
                                                           : "some criteria FAILED");
    return failures;
}
