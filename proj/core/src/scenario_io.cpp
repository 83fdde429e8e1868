#include "drflex/scenario_io.hpp"

#include "drflex/model.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <sstream>

namespace drflex {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double get_num(const json& j, const char* key, double fallback) {
    return j.contains(key) ? j.at(key).get<double>() : fallback;
}

FleetSpec parse_fleet(const json& j) {
    FleetSpec fleet;
    if (j.contains("on_off")) {
        for (const auto& d : j.at("on_off")) {
            if (d.contains("count")) {
                // shorthand: {"id_prefix","count","kw"}
                const int count = d.at("count").get<int>();
                const std::string prefix = d.at("id_prefix").get<std::string>();
                for (int i = 1; i <= count; ++i) {
                    char id[64];
                    std::snprintf(id, sizeof(id), "%s%02d", prefix.c_str(), i);
                    fleet.on_off.push_back({id, d.at("kw").get<double>()});
                }
            } else {
                fleet.on_off.push_back(
                    {d.at("id").get<std::string>(), d.at("kw").get<double>()});
            }
        }
    }
    if (j.contains("continuous")) {
        for (const auto& d : j.at("continuous"))
            fleet.continuous.push_back({d.at("id").get<std::string>(),
                                        d.at("kw_min").get<double>(),
                                        d.at("kw_max").get<double>()});
    }
    return fleet;
}

json fleet_json(const FleetSpec& fleet) {
    json j;
    j["on_off"] = json::array();
    for (const auto& d : fleet.on_off)
        j["on_off"].push_back({{"id", d.id}, {"kw", d.nominal_power}});
    j["continuous"] = json::array();
    for (const auto& d : fleet.continuous)
        j["continuous"].push_back(
            {{"id", d.id}, {"kw_min", d.v_min}, {"kw_max", d.v_max}});
    return j;
}

// comm_delay is a number or {"uniform": [lo, hi]}, drawn deterministically
double parse_comm_delay(const json& j, std::mt19937_64& rng) {
    if (j.is_number()) return j.get<double>();
    const auto& range = j.at("uniform");
    std::uniform_real_distribution<double> uni(range.at(0).get<double>(),
                                               range.at(1).get<double>());
    return uni(rng);
}

DeviceDynamics parse_dynamics(const json& j, std::mt19937_64& rng) {
    DeviceDynamics dyn;
    dyn.comm_delay = j.contains("comm_delay") ? parse_comm_delay(j.at("comm_delay"), rng) : 0.0;
    dyn.rise_time_constant = get_num(j, "rise_time", 1.0);
    dyn.true_gain_bias = get_num(j, "bias", 1.0);
    return dyn;
}

ScenarioGroup parse_group(const json& j, std::uint64_t seed, std::size_t index) {
    ScenarioGroup g;
    g.model.name = j.at("name").get<std::string>();
    const auto& plant = j.at("plant");
    g.model.plant.gain = plant.at("gain").get<double>();
    g.model.plant.time_constant = plant.at("time_constant").get<double>();
    g.model.delay = j.at("delay").get<double>();
    g.model.participation = j.at("participation").get<double>();

    const auto& ctl = j.at("controller");
    g.model.controller = make_ffpi({ctl.at("kp").get<double>(), ctl.at("ki").get<double>()},
                                   ctl.at("t_ff").get<double>(), ctl.at("h_nom").get<double>(),
                                   get_num(ctl, "t_filter", 0.0));

    const std::string actuation =
        j.contains("actuation") ? j.at("actuation").get<std::string>() : "lumped";
    if (actuation == "lumped") {
        g.actuation = GroupActuation::lumped;
        if (j.contains("fleet")) g.fleet = parse_fleet(j.at("fleet"));
        return g;
    }
    if (actuation != "fleet")
        throw std::invalid_argument("group '" + g.model.name + "': unknown actuation '" +
                                    actuation + "'");

    g.actuation = GroupActuation::fleet;
    std::mt19937_64 rng(seed ^ (0x51ed270b * (index + 1)));
    if (j.contains("racks")) {
        for (const auto& rj : j.at("racks")) {
            RackGroup rack;
            rack.solo_kw = rj.at("solo_kw").get<double>();
            rack.full_kw = rj.at("full_kw").get<double>();
            if (rj.contains("devices")) {
                for (const auto& dj : rj.at("devices")) {
                    OnOffLoad load{dj.at("id").get<std::string>(), dj.at("kw").get<double>()};
                    rack.devices.emplace_back(load, parse_dynamics(dj, rng));
                }
            } else {
                const int count = rj.at("count").get<int>();
                const std::string prefix = rj.at("id_prefix").get<std::string>();
                for (int i = 1; i <= count; ++i) {
                    char id[64];
                    std::snprintf(id, sizeof(id), "%s%02d", prefix.c_str(), i);
                    OnOffLoad load{id, rj.at("kw").get<double>()};
                    rack.devices.emplace_back(load, parse_dynamics(rj, rng));
                }
            }
            g.racks.push_back(std::move(rack));
        }
    }
    if (j.contains("continuous")) {
        for (const auto& dj : j.at("continuous")) {
            ContinuousDevice dev;
            dev.load = {dj.at("id").get<std::string>(), dj.at("kw_min").get<double>(),
                        dj.at("kw_max").get<double>()};
            dev.dynamics = parse_dynamics(dj, rng);
            g.continuous.push_back(std::move(dev));
        }
    }
    return g;
}

json group_json(const ScenarioGroup& g) {
    json j;
    j["name"] = g.model.name;
    j["plant"] = {{"gain", g.model.plant.gain},
                  {"time_constant", g.model.plant.time_constant}};
    j["delay"] = g.model.delay;
    j["participation"] = g.model.participation;
    j["controller"] = {{"kp", g.model.controller.pi.kp},
                       {"ki", g.model.controller.pi.ki},
                       {"t_ff", g.model.controller.t_ff},
                       {"h_nom", g.model.controller.h_nom},
                       {"t_filter", g.model.controller.t_filter}};
    if (g.actuation == GroupActuation::lumped) {
        j["actuation"] = "lumped";
        j["fleet"] = fleet_json(g.fleet);
        return j;
    }
    j["actuation"] = "fleet";
    j["racks"] = json::array();
    for (const auto& rack : g.racks) {
        json rj;
        rj["solo_kw"] = rack.solo_kw;
        rj["full_kw"] = rack.full_kw;
        rj["devices"] = json::array();
        for (const auto& [load, dyn] : rack.devices)
            rj["devices"].push_back({{"id", load.id},
                                     {"kw", load.nominal_power},
                                     {"comm_delay", dyn.comm_delay},
                                     {"rise_time", dyn.rise_time_constant},
                                     {"bias", dyn.true_gain_bias}});
        j["racks"].push_back(std::move(rj));
    }
    j["continuous"] = json::array();
    for (const auto& dev : g.continuous)
        j["continuous"].push_back({{"id", dev.load.id},
                                   {"kw_min", dev.load.v_min},
                                   {"kw_max", dev.load.v_max},
                                   {"comm_delay", dev.dynamics.comm_delay},
                                   {"rise_time", dev.dynamics.rise_time_constant},
                                   {"bias", dev.dynamics.true_gain_bias}});
    return j;
}

Scenario parse_scenario(const json& j) {
    Scenario sc;
    sc.name = j.contains("name") ? j.at("name").get<std::string>() : "scenario";
    sc.grid.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : 0;
    const auto& sim = j.at("sim");
    sc.grid.dt = sim.at("dt").get<double>();
    sc.grid.duration = sim.at("duration").get<double>();

    const auto& outer = j.at("outer");
    sc.outer = {outer.at("kp").get<double>(), outer.at("ki").get<double>()};

    const auto& tgt = j.at("target");
    const std::string type = tgt.at("type").get<std::string>();
    if (type == "square") {
        sc.target.kind = TargetProfile::Kind::square;
        sc.target.low = tgt.at("low").get<double>();
        sc.target.high = tgt.at("high").get<double>();
        sc.target.period = tgt.at("period").get<double>();
        sc.target.t_start = get_num(tgt, "t_start", 0.0);
    } else if (type == "steps") {
        sc.target.kind = TargetProfile::Kind::steps;
        for (const auto& st : tgt.at("steps"))
            sc.target.steps.emplace_back(st.at("t").get<double>(),
                                         st.at("value").get<double>());
    } else {
        throw std::invalid_argument("unknown target type '" + type + "'");
    }

    if (j.contains("uncontrollable")) {
        const auto& unc = j.at("uncontrollable");
        sc.uncontrollable_base = get_num(unc, "base", 0.0);
        if (unc.contains("noise")) {
            sc.noise.sigma = get_num(unc.at("noise"), "sigma", 0.0);
            sc.noise.correlation_time = get_num(unc.at("noise"), "correlation_time", 5.0);
        }
    }
    sc.redispatch_threshold = get_num(j, "redispatch_threshold", 0.5);

    std::size_t index = 0;
    for (const auto& gj : j.at("groups")) sc.groups.push_back(parse_group(gj, sc.grid.seed, index++));

    if (j.contains("faults")) {
        for (const auto& fj : j.at("faults")) {
            FaultEvent f;
            f.time = fj.at("t").get<double>();
            f.group = fj.at("group").get<std::string>();
            const std::string kind = fj.at("kind").get<std::string>();
            if (kind == "freeze") f.kind = FaultKind::freeze;
            else if (kind == "offline") f.kind = FaultKind::offline;
            else throw std::invalid_argument("unknown fault kind '" + kind + "'");
            sc.faults.push_back(std::move(f));
        }
    }

    sc.validate();
    return sc;
}

}  // namespace

Scenario scenario_from_json(const std::string& text) {
    try {
        return parse_scenario(json::parse(text));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("scenario JSON: ") + e.what());
    }
}

Scenario load_scenario(const std::filesystem::path& path) {
    try {
        return scenario_from_json(read_file(path));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

std::string scenario_to_json(const Scenario& sc) {
    json j;
    j["name"] = sc.name;
    j["seed"] = sc.grid.seed;
    j["sim"] = {{"dt", sc.grid.dt}, {"duration", sc.grid.duration}};
    j["outer"] = {{"kp", sc.outer.kp}, {"ki", sc.outer.ki}};
    if (sc.target.kind == TargetProfile::Kind::square) {
        j["target"] = {{"type", "square"},
                       {"low", sc.target.low},
                       {"high", sc.target.high},
                       {"period", sc.target.period},
                       {"t_start", sc.target.t_start}};
    } else {
        json steps = json::array();
        for (const auto& [t, v] : sc.target.steps) steps.push_back({{"t", t}, {"value", v}});
        j["target"] = {{"type", "steps"}, {"steps", std::move(steps)}};
    }
    j["uncontrollable"] = {{"base", sc.uncontrollable_base},
                           {"noise",
                            {{"sigma", sc.noise.sigma},
                             {"correlation_time", sc.noise.correlation_time}}}};
    j["redispatch_threshold"] = sc.redispatch_threshold;
    j["groups"] = json::array();
    for (const auto& g : sc.groups) j["groups"].push_back(group_json(g));
    j["faults"] = json::array();
    for (const auto& f : sc.faults)
        j["faults"].push_back({{"t", f.time},
                               {"group", f.group},
                               {"kind", f.kind == FaultKind::freeze ? "freeze" : "offline"}});
    return j.dump(2) + "\n";
}

FleetSpec fleet_from_json(const std::string& text) {
    try {
        FleetSpec fleet = parse_fleet(json::parse(text));
        fleet.validate();
        return fleet;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("fleet JSON: ") + e.what());
    }
}

FleetSpec load_fleet(const std::filesystem::path& path) {
    try {
        return fleet_from_json(read_file(path));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

std::string fleet_to_json(const FleetSpec& fleet) { return fleet_json(fleet).dump(2) + "\n"; }

std::string assignment_to_json(const Assignment& a, double target, double uncontrollable) {
    json j;
    j["statuses"] = a.statuses;
    j["setpoints"] = a.setpoints;
    j["total_power"] = a.total_power;
    j["objective"] = a.objective;
    j["optimal"] = a.optimal;
    j["target"] = target;
    j["uncontrollable"] = uncontrollable;
    j["gap"] = target - uncontrollable - a.total_power;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// stock building
// ---------------------------------------------------------------------------

namespace {

FleetSpec rack_fleet() {
    FleetSpec f;
    for (int i = 1; i <= 31; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "heater%02d", i);
        f.on_off.push_back({id, 1.0});
    }
    for (int i = 1; i <= 60; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "blower%02d", i);
        f.on_off.push_back({id, 1.1});
    }
    return f;
}

FleetSpec hvac_fleet() {
    FleetSpec f;
    for (int i = 1; i <= 4; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "pump%d", i);
        f.continuous.push_back({id, 0.2, 3.0});
    }
    for (int i = 1; i <= 2; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "fan%d", i);
        f.continuous.push_back({id, 0.3, 3.5});
    }
    return f;
}

FleetSpec pv_fleet() {
    FleetSpec f;
    for (int i = 1; i <= 3; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "inverter%d", i);
        f.continuous.push_back({id, 0.0, 4.0});
    }
    return f;
}

}  // namespace

Scenario default_scenario() {
    Scenario sc;
    sc.name = "default";
    sc.grid = {0.01, 1660.0, 42};
    sc.outer = {0.15, 0.05};
    sc.target.kind = TargetProfile::Kind::square;
    sc.target.low = 40.0;
    sc.target.high = 54.0;
    sc.target.period = 800.0;
    sc.target.t_start = 100.0;
    sc.uncontrollable_base = 5.0;
    sc.noise = {0.15, 5.0};
    sc.redispatch_threshold = 0.5;

    ScenarioGroup racks;
    racks.model.name = "racks";
    racks.model.plant = {0.9359, 0.0890};
    racks.model.delay = 5.0;
    racks.model.controller = make_ffpi({0.2, 0.05}, 0.0890, 0.9359, 0.0445);
    racks.model.participation = 0.758;
    racks.fleet = rack_fleet();

    ScenarioGroup hvac;
    hvac.model.name = "hvac";
    hvac.model.plant = {0.9, 20.0};
    hvac.model.delay = 8.0;
    hvac.model.controller = make_ffpi({0.2, 0.05}, 20.0, 0.9, 2.0);
    hvac.model.participation = 0.148;
    hvac.fleet = hvac_fleet();

    ScenarioGroup pv;
    pv.model.name = "pv";
    pv.model.plant = {1.0, 0.5};
    pv.model.delay = 1.0;
    pv.model.controller = make_ffpi({0.2, 0.05}, 0.5, 1.0, 0.05);
    pv.model.participation = 0.094;
    pv.fleet = pv_fleet();

    sc.groups = {std::move(racks), std::move(hvac), std::move(pv)};
    return sc;
}

Scenario default_fleet_scenario() {
    Scenario sc = default_scenario();
    sc.name = "default-fleet";
    sc.grid.duration = 300.0;

    std::mt19937_64 rng(sc.grid.seed ^ 0x51ed270bULL);
    std::uniform_real_distribution<double> delay_range(1.0, 8.0);

    auto& racks = sc.groups[0];
    racks.actuation = GroupActuation::fleet;
    RackGroup heaters{{}, 1.0, 1.0};
    RackGroup blowers{{}, 1.5, 1.1};
    for (const auto& load : racks.fleet.on_off) {
        DeviceDynamics dyn{delay_range(rng), load.nominal_power > 1.05 ? 0.089 : 0.05,
                           load.nominal_power > 1.05 ? 1.0 : 1.05};
        (load.nominal_power > 1.05 ? blowers : heaters).devices.emplace_back(load, dyn);
    }
    racks.racks = {std::move(heaters), std::move(blowers)};

    auto& hvac = sc.groups[1];
    hvac.actuation = GroupActuation::fleet;
    for (const auto& load : hvac.fleet.continuous)
        hvac.continuous.push_back({load, {8.0, 20.0, 0.9}});

    auto& pv = sc.groups[2];
    pv.actuation = GroupActuation::fleet;
    for (const auto& load : pv.fleet.continuous)
        pv.continuous.push_back({load, {1.0, 0.5, 1.0}});

    return sc;
}

FleetSpec default_fleet() {
    FleetSpec all;
    for (const FleetSpec& f : {rack_fleet(), hvac_fleet(), pv_fleet()}) {
        all.on_off.insert(all.on_off.end(), f.on_off.begin(), f.on_off.end());
        all.continuous.insert(all.continuous.end(), f.continuous.begin(), f.continuous.end());
    }
    return all;
}

}  // namespace drflex
