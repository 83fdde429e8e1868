#include "drflex/analysis.hpp"
#include "drflex/io.hpp"
#include "drflex/model.hpp"
#include "drflex/parallel.hpp"
#include "drflex/scenario_io.hpp"
#include "drflex/scheduler.hpp"
#include "drflex/stability.hpp"
#include "drflex/testbed.hpp"
#include "drflex/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drflex;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitNumeric = 3;

json num_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return v;
}

struct ScenarioSource {
    Scenario scenario;
    std::string label;  // path or builtin:<name>
    std::string hash;
};

ScenarioSource resolve_scenario(const std::string& arg) {
    ScenarioSource src;
    if (arg == "default") {
        src.scenario = default_scenario();
        src.label = "builtin:default";
        src.hash = fnv1a64_hex(scenario_to_json(src.scenario));
    } else if (arg == "default-fleet") {
        src.scenario = default_fleet_scenario();
        src.label = "builtin:default-fleet";
        src.hash = fnv1a64_hex(scenario_to_json(src.scenario));
    } else {
        src.scenario = load_scenario(arg);
        src.label = arg;
        src.hash = file_hash_hex(arg);
    }
    return src;
}

void apply_seed_overrides(Scenario& sc, const std::optional<std::uint64_t>& flag_seed) {
    if (const char* env = std::getenv("DRFLEX_SEED")) sc.grid.seed = std::strtoull(env, nullptr, 10);
    if (flag_seed) sc.grid.seed = *flag_seed;
}

std::vector<double> parse_range(const std::string& text, const char* what) {
    double a = 0.0, step = 0.0, b = 0.0;
    const int n = std::sscanf(text.c_str(), "%lf:%lf:%lf", &a, &step, &b);
    if (n == 1) return {a};
    if (n != 3 || !(step > 0.0) || b < a)
        throw std::invalid_argument(std::string(what) + ": expected 'a:step:b' with step > 0");
    std::vector<double> grid;
    const long count = std::lround(std::floor((b - a) / step + 1e-9)) + 1;
    for (long i = 0; i < count; ++i) grid.push_back(a + static_cast<double>(i) * step);
    return grid;
}

// collects output files and writes the manifest at the end of a command
struct RunContext {
    fs::path out_dir;
    RunManifest manifest;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    RunContext(const std::string& command, const fs::path& dir) {
        out_dir = dir;
        fs::create_directories(out_dir);
        manifest.command = command;
        manifest.version = kVersion;
    }

    fs::path file(const std::string& name) {
        manifest.outputs.push_back(name);
        return out_dir / name;
    }

    void write_json(const std::string& name, const json& j) {
        std::ofstream out(file(name), std::ios::binary);
        out << j.dump(2) << "\n";
    }

    void finish() {
        manifest.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_manifest(out_dir / "manifest.json", manifest);
    }
};

json metrics_json(const SimTrace& trace) {
    json j;
    const auto events = find_step_events(trace);
    json list = json::array();
    for (const auto& ev : events) {
        const auto m = response_metrics(trace, ev);
        list.push_back({{"t", ev.time},
                        {"from", ev.old_target},
                        {"to", ev.new_target},
                        {"initial_response_s", num_or_inf(m.initial_response)},
                        {"ramp_time_s", num_or_inf(m.ramp_time)},
                        {"h2", num_or_inf(m.h2)},
                        {"ss_error_kw", num_or_inf(m.ss_error)},
                        {"ss_osc_kw", num_or_inf(m.ss_oscillation)}});
    }
    if (!events.empty()) {
        const auto first = response_metrics(trace, events.front());
        j["initial_response_s"] = num_or_inf(first.initial_response);
        j["ramp_time_s"] = num_or_inf(first.ramp_time);
        j["h2"] = num_or_inf(first.h2);
        j["ss_error_kw"] = num_or_inf(first.ss_error);
        j["ss_osc_kw"] = num_or_inf(first.ss_oscillation);
    }
    j["steps"] = std::move(list);
    j["diverged"] = trace.diverged;
    return j;
}

int cmd_simulate(const std::string& scenario_arg, const std::string& out_dir, bool open_loop,
                 std::optional<std::uint64_t> seed) {
    ScenarioSource src = resolve_scenario(scenario_arg);
    apply_seed_overrides(src.scenario, seed);

    // an infeasible schedule at the initial target is a configuration-level
    // failure, reported before simulating
    const Scenario& sc = src.scenario;
    CoordinatorConfig cfg{sc.control_model(), sc.fleet_partition(), sc.redispatch_threshold, {}};
    try {
        schedule(cfg.merged_fleet(), sc.target.value_at(0.0), sc.uncontrollable_base);
    } catch (const InfeasibleScheduleError& e) {
        std::cerr << "drflex: initial dispatch infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    }

    RunContext ctx(open_loop ? "simulate --open-loop" : "simulate", out_dir);
    ctx.manifest.scenario = src.label;
    ctx.manifest.scenario_hash = src.hash;
    ctx.manifest.seed = sc.grid.seed;

    const SimTrace trace = open_loop ? simulate_open_loop(sc) : simulate_closed_loop(sc);
    write_trace_csv(ctx.file("trace.csv"), trace);
    ctx.write_json("metrics.json", metrics_json(trace));
    ctx.finish();

    if (trace.diverged) {
        std::cerr << "drflex: simulation diverged at t=" << trace.diverged_at << " s\n";
        return kExitNumeric;
    }
    std::cout << "wrote " << (ctx.out_dir / "trace.csv").string() << " ("
              << trace.size() << " samples)\n";
    return kExitOk;
}

int cmd_sweep(const std::string& scenario_arg, const std::string& loop_arg,
              const std::string& kp_range, const std::string& ki_range,
              const std::string& metric_arg, const std::string& out_dir, int jobs) {
    ScenarioSource src = resolve_scenario(scenario_arg);
    const TwoLevelModel model = src.scenario.control_model();

    LoopBuilder builder;
    if (loop_arg == "outer") {
        builder = [model](double kp, double ki) {
            TwoLevelModel m = model;
            m.outer = {kp, ki};
            return assemble_full_system(m);
        };
    } else if (loop_arg.rfind("inner:", 0) == 0) {
        const std::string name = loop_arg.substr(6);
        const GroupModel* found = nullptr;
        for (const auto& g : model.groups)
            if (g.name == name) found = &g;
        if (!found) throw std::invalid_argument("sweep: unknown group '" + name + "'");
        const GroupModel group = *found;
        builder = [group](double kp, double ki) {
            GroupModel g = group;
            g.controller.pi = {kp, ki};
            return assemble_inner_loop(g);
        };
    } else {
        throw std::invalid_argument("sweep: --loop must be 'outer' or 'inner:<group>'");
    }

    SweepMetric metric;
    if (metric_arg == "index") metric = stability_index_metric();
    else if (metric_arg == "h2") metric = h2_step_metric();
    else throw std::invalid_argument("sweep: --metric must be 'index' or 'h2'");

    const auto kp_grid = parse_range(kp_range, "--kp");
    const auto ki_grid = parse_range(ki_range, "--ki");

    RunContext ctx("sweep", out_dir);
    ctx.manifest.scenario = src.label;
    ctx.manifest.scenario_hash = src.hash;
    ctx.manifest.seed = src.scenario.grid.seed;

    const SweepResult sweep = parameter_sweep(builder, kp_grid, ki_grid, metric, jobs);
    write_sweep_csv(ctx.file("sweep.csv"), sweep);
    ctx.finish();
    std::cout << "wrote " << (ctx.out_dir / "sweep.csv").string() << " ("
              << sweep.values.size() << " points)\n";
    return kExitOk;
}

int cmd_stability(const std::string& scenario_arg, const std::string& benchmark,
                  const std::string& loop_arg, int n, const std::string& out_dir) {
    RunContext ctx("stability", out_dir);

    DelaySystem sys;
    if (!benchmark.empty()) {
        if (benchmark != "hayes")
            throw std::invalid_argument("stability: unknown benchmark '" + benchmark + "'");
        Eigen::MatrixXd a0(1, 1), a1(1, 1);
        a0 << 0.0;
        a1 << -1.0;
        sys = make_delay_system(a0, {{a1, 1.0}});
        ctx.manifest.scenario = "builtin:hayes";
        ctx.manifest.scenario_hash = fnv1a64_hex("hayes");
    } else {
        ScenarioSource src = resolve_scenario(scenario_arg);
        ctx.manifest.scenario = src.label;
        ctx.manifest.scenario_hash = src.hash;
        ctx.manifest.seed = src.scenario.grid.seed;
        const TwoLevelModel model = src.scenario.control_model();
        if (loop_arg == "full") {
            sys = assemble_full_system(model).sys;
        } else if (loop_arg.rfind("inner:", 0) == 0) {
            const std::string name = loop_arg.substr(6);
            const GroupModel* found = nullptr;
            for (const auto& g : model.groups)
                if (g.name == name) found = &g;
            if (!found) throw std::invalid_argument("stability: unknown group '" + name + "'");
            sys = assemble_inner_loop(*found).sys;
        } else {
            throw std::invalid_argument("stability: --loop must be 'full' or 'inner:<group>'");
        }
    }

    StabilityOptions opts;
    opts.n = n;
    const StabilityReport rep = stability_index(sys, opts);

    json j;
    j["index"] = rep.index;
    j["rightmost"] = {{"re", rep.rightmost.real()}, {"im", rep.rightmost.imag()}};
    j["raw_index"] = rep.raw_index;
    j["converged"] = rep.converged;
    j["n"] = opts.n;
    j["dim"] = sys.dim();
    j["residual"] = rep.refined.empty() ? 0.0 : rep.refined.front().residual;
    ctx.write_json("stability.json", j);
    ctx.finish();

    std::cout << "stability index = " << rep.index << " (rightmost " << rep.rightmost.real()
              << (rep.rightmost.imag() >= 0 ? "+" : "") << rep.rightmost.imag() << "i)\n";
    if (!rep.converged) {
        std::cerr << "drflex: eigenvalue refinement did not converge\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_bode(const std::string& scenario_arg, const std::string& tau_range,
             const std::string& out_dir) {
    ScenarioSource src = resolve_scenario(scenario_arg);
    const TwoLevelModel model = src.scenario.control_model();
    const auto taus = parse_range(tau_range, "--tau");

    RunContext ctx("bode", out_dir);
    ctx.manifest.scenario = src.label;
    ctx.manifest.scenario_hash = src.hash;
    ctx.manifest.seed = src.scenario.grid.seed;

    const auto sweep = margin_sweep(model, taus);
    write_margin_csv(ctx.file("margins.csv"), sweep);
    ctx.finish();

    for (const auto& [tau, rep] : sweep)
        std::cout << "tau=" << tau << "  gm=" << rep.gain_margin
                  << "  pm=" << rep.phase_margin_deg << " deg\n";
    return kExitOk;
}

int cmd_montecarlo(const std::string& scenario_arg, const std::string& kind_arg, double pct,
                   int n, std::optional<std::uint64_t> seed, int jobs, bool full_sim,
                   const std::string& out_dir) {
    ScenarioSource src = resolve_scenario(scenario_arg);
    apply_seed_overrides(src.scenario, seed);
    const TwoLevelModel model = src.scenario.control_model();

    UncertaintyKind kind;
    if (kind_arg == "gain") kind = UncertaintyKind::gain;
    else if (kind_arg == "delay") kind = UncertaintyKind::delay;
    else throw std::invalid_argument("montecarlo: --uncertainty must be 'gain' or 'delay'");

    RunContext ctx("montecarlo", out_dir);
    ctx.manifest.scenario = src.label;
    ctx.manifest.scenario_hash = src.hash;
    ctx.manifest.seed = src.scenario.grid.seed;

    MonteCarloOptions opts;
    opts.jobs = jobs;
    MonteCarloSummary sum = monte_carlo(model, kind, pct, n, src.scenario.grid.seed, opts);

    if (full_sim) {
        // re-evaluate H2 on the device-level simulator instead of the linear model
        parallel_for(
            sum.samples.size(),
            [&](std::size_t i) {
                auto& s = sum.samples[i];
                if (!s.ok) return;
                Scenario pert = src.scenario;
                for (std::size_t g = 0; g < pert.groups.size(); ++g) {
                    if (kind == UncertaintyKind::gain)
                        pert.groups[g].model.plant.gain *= s.factors[g];
                    else
                        pert.groups[g].model.delay *= s.factors[g];
                }
                pert.grid.seed = sum.seed + i;
                const SimTrace trace = simulate_closed_loop(pert);
                const auto events = find_step_events(trace);
                if (trace.diverged || events.empty()) {
                    s.h2 = std::numeric_limits<double>::infinity();
                    return;
                }
                s.h2 = response_metrics(trace, events.front()).h2;
            },
            jobs);
    }

    std::vector<std::string> names;
    for (const auto& g : model.groups) names.push_back(g.name);
    write_monte_carlo_csv(ctx.file("montecarlo.csv"), sum, names);

    json j;
    j["kind"] = kind_arg;
    j["pct"] = pct;
    j["n"] = sum.n;
    j["seed"] = sum.seed;
    j["stable_fraction"] = sum.stable_fraction;
    j["failures"] = sum.failures;
    j["index"] = {{"min", sum.index_min}, {"max", sum.index_max}, {"mean", sum.index_mean}};
    j["h2"] = {{"min", num_or_inf(sum.h2_min)},
               {"max", num_or_inf(sum.h2_max)},
               {"mean", num_or_inf(sum.h2_mean)}};
    ctx.write_json("mc_summary.json", j);
    ctx.finish();

    std::cout << "stable fraction " << sum.stable_fraction << " over " << sum.n << " samples\n";
    return kExitOk;
}

int cmd_schedule(const std::string& fleet_arg, double target, double q,
                 const std::string& previous_path, const std::string& out_dir) {
    FleetSpec fleet = fleet_arg == "default" ? default_fleet() : load_fleet(fleet_arg);

    std::optional<Assignment> previous;
    if (!previous_path.empty()) {
        std::ifstream in(previous_path);
        if (!in) throw std::invalid_argument("cannot read '" + previous_path + "'");
        json j = json::parse(in, nullptr, true, true);
        Assignment prev;
        for (const auto& [id, v] : j.at("statuses").items()) prev.statuses[id] = v.get<int>();
        previous = std::move(prev);
    }

    RunContext ctx("schedule", out_dir);
    ctx.manifest.scenario = fleet_arg == "default" ? "builtin:default-fleet-spec" : fleet_arg;
    ctx.manifest.scenario_hash = fleet_arg == "default" ? fnv1a64_hex(fleet_to_json(fleet))
                                                        : file_hash_hex(fleet_arg);

    const Assignment a = schedule(fleet, target, q, previous ? &*previous : nullptr);
    const std::string text = assignment_to_json(a, target, q);
    {
        std::ofstream out(ctx.file("assignment.json"), std::ios::binary);
        out << text;
    }
    ctx.finish();
    std::cout << text;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"virtual demand-response testbed and control design toolkit"};
    app.require_subcommand(1);

    std::string scenario = "default", out_dir = "out";
    std::optional<std::uint64_t> seed;
    int jobs = 0;

    auto* sim = app.add_subcommand("simulate", "run the closed- or open-loop experiment");
    bool open_loop = false;
    sim->add_option("--scenario", scenario, "scenario JSON path or builtin name");
    sim->add_flag("--open-loop", open_loop, "scheduler-only dispatch, controllers bypassed");
    sim->add_option("--out", out_dir, "output directory");
    sim->add_option("--seed", seed, "override the scenario seed");

    auto* swp = app.add_subcommand("sweep", "stability-index or H2 sweep over PI gains");
    std::string loop = "outer", kp_range, ki_range, metric = "index";
    swp->add_option("--scenario", scenario);
    swp->add_option("--loop", loop, "'outer' or 'inner:<group>'");
    swp->add_option("--kp", kp_range, "kp grid a:step:b")->required();
    swp->add_option("--ki", ki_range, "ki grid a:step:b")->required();
    swp->add_option("--metric", metric, "'index' or 'h2'");
    swp->add_option("--out", out_dir);
    swp->add_option("--jobs", jobs, "worker threads (0 = all cores)");

    auto* stab = app.add_subcommand("stability", "rightmost-eigenvalue stability index");
    std::string benchmark, stab_loop = "full";
    int cheb_n = 20;
    stab->add_option("--scenario", scenario);
    stab->add_option("--benchmark", benchmark, "built-in system, e.g. 'hayes'");
    stab->add_option("--loop", stab_loop, "'full' or 'inner:<group>'");
    stab->add_option("--n", cheb_n, "Chebyshev discretization order");
    stab->add_option("--out", out_dir);

    auto* bode = app.add_subcommand("bode", "gain/phase margins vs common delay");
    std::string tau_range = "0:1:10";
    bode->add_option("--scenario", scenario);
    bode->add_option("--tau", tau_range, "common delay grid a:step:b or single value");
    bode->add_option("--out", out_dir);

    auto* mc = app.add_subcommand("montecarlo", "robustness under parameter uncertainty");
    std::string kind = "gain";
    double pct = 0.2;
    int n_samples = 1000;
    bool full_sim = false;
    mc->add_option("--scenario", scenario);
    mc->add_option("--uncertainty", kind, "'gain' or 'delay'");
    mc->add_option("--pct", pct, "uncertainty half-width, e.g. 0.2");
    mc->add_option("--n", n_samples, "number of realizations");
    mc->add_option("--seed", seed);
    mc->add_option("--jobs", jobs);
    mc->add_flag("--full-sim", full_sim, "H2 from the device-level simulator");
    mc->add_option("--out", out_dir);

    auto* sched = app.add_subcommand("schedule", "solve one device-scheduler instance");
    std::string fleet_arg = "default", previous_path;
    double target = 0.0, q_hat = 0.0;
    sched->add_option("--fleet", fleet_arg, "fleet JSON path or 'default'");
    sched->add_option("--target", target, "building power cap [kW]")->required();
    sched->add_option("--q", q_hat, "uncontrollable power estimate [kW]");
    sched->add_option("--previous", previous_path, "previous assignment JSON (tie-break)");
    sched->add_option("--out", out_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (sim->parsed()) return cmd_simulate(scenario, out_dir, open_loop, seed);
        if (swp->parsed()) return cmd_sweep(scenario, loop, kp_range, ki_range, metric, out_dir, jobs);
        if (stab->parsed()) return cmd_stability(scenario, benchmark, stab_loop, cheb_n, out_dir);
        if (bode->parsed()) return cmd_bode(scenario, tau_range, out_dir);
        if (mc->parsed())
            return cmd_montecarlo(scenario, kind, pct, n_samples, seed, jobs, full_sim, out_dir);
        if (sched->parsed()) return cmd_schedule(fleet_arg, target, q_hat, previous_path, out_dir);
    } catch (const InfeasibleScheduleError& e) {
        std::cerr << "drflex: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::invalid_argument& e) {
        std::cerr << "drflex: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "drflex: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}
