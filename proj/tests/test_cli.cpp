#include "drflex/io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string stdout_text;
};

RunResult run_cli(const std::string& args, const fs::path& workdir) {
    const fs::path log = workdir / "stdout.txt";
    std::ostringstream cmd;
    cmd << "cd " << workdir << " && " << DRFLEX_CLI_PATH << " " << args << " > " << log
        << " 2> " << (workdir / "stderr.txt");
    const int status = std::system(cmd.str().c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.stdout_text = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "drflex_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// a fast scenario for end-to-end runs: short square wave on the stock building
void write_short_scenario(const fs::path& path, double sigma) {
    std::ifstream in(fs::path(DRFLEX_SOURCE_DIR) / "scenarios" / "default.json");
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    auto replace = [&](const std::string& from, const std::string& to) {
        const auto pos = text.find(from);
        REQUIRE(pos != std::string::npos);
        text.replace(pos, from.size(), to);
    };
    replace("\"duration\": 1660.0", "\"duration\": 120.0");
    replace("\"period\": 800.0", "\"period\": 120.0");
    replace("\"t_start\": 100.0", "\"t_start\": 20.0");
    if (sigma == 0.0) replace("\"sigma\": 0.15", "\"sigma\": 0.0");
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("simulate writes trace, metrics and manifest") {
    const fs::path dir = fresh_dir("simulate");
    write_short_scenario(dir / "short.json", 0.0);
    const auto r = run_cli("simulate --scenario short.json --out run", dir);
    CHECK(r.exit_code == 0);

    const std::string trace = slurp(dir / "run/trace.csv");
    CHECK(trace.rfind("t,target,obs,outer_cmd,g1_ref,g1_p,g2_ref,g2_p,g3_ref,g3_p\n", 0) == 0);

    const std::string metrics = slurp(dir / "run/metrics.json");
    CHECK(metrics.find("\"ramp_time_s\"") != std::string::npos);
    CHECK(metrics.find("\"initial_response_s\"") != std::string::npos);
    CHECK(metrics.find("\"ramp_time_s\": \"inf\"") == std::string::npos);  // finite closed loop

    const std::string manifest = slurp(dir / "run/manifest.json");
    CHECK(manifest.find("\"trace.csv\"") != std::string::npos);
    CHECK(manifest.find("\"metrics.json\"") != std::string::npos);
    CHECK(manifest.find("\"version\"") != std::string::npos);

    // every listed output exists
    for (const std::string name : {"trace.csv", "metrics.json", "manifest.json"})
        CHECK(fs::exists(dir / "run" / name));

    // the recorded scenario hash verifies against the file content
    const auto hash_pos = manifest.find("\"scenario_hash\": \"");
    REQUIRE(hash_pos != std::string::npos);
    const std::string recorded = manifest.substr(hash_pos + 18, 16);
    CHECK(recorded == drflex::file_hash_hex(dir / "short.json"));
}

TEST_CASE("open-loop mode reports an infinite ramp") {
    const fs::path dir = fresh_dir("openloop");
    write_short_scenario(dir / "short.json", 0.0);
    const auto r = run_cli("simulate --scenario short.json --open-loop --out run", dir);
    CHECK(r.exit_code == 0);
    const std::string metrics = slurp(dir / "run/metrics.json");
    CHECK(metrics.find("\"ramp_time_s\": \"inf\"") != std::string::npos);
}

TEST_CASE("missing scenario file exits 1 and names the path") {
    const fs::path dir = fresh_dir("missing");
    const auto r = run_cli("simulate --scenario nope.json --out run", dir);
    CHECK(r.exit_code == 1);
    const std::string err = slurp(dir / "stderr.txt");
    CHECK(err.find("nope.json") != std::string::npos);
}

TEST_CASE("infeasible initial dispatch exits 2") {
    const fs::path dir = fresh_dir("infeasible");
    std::ofstream out(dir / "bad.json");
    out << R"({
        "name": "bad", "seed": 1,
        "sim": {"dt": 0.01, "duration": 10.0},
        "outer": {"kp": 0.1, "ki": 0.05},
        "target": {"type": "steps", "steps": [{"t": 0.0, "value": 1.0}]},
        "groups": [{
            "name": "g", "plant": {"gain": 1.0, "time_constant": 1.0},
            "delay": 1.0, "participation": 1.0,
            "controller": {"kp": 0.1, "ki": 0.05, "t_ff": 1.0, "h_nom": 1.0},
            "fleet": {"continuous": [{"id": "c", "kw_min": 5.0, "kw_max": 9.0}]}
        }]
    })";
    out.close();
    const auto r = run_cli("simulate --scenario bad.json --out run", dir);
    CHECK(r.exit_code == 2);
}

TEST_CASE("identical seeds give byte-identical artifacts") {
    const fs::path dir = fresh_dir("determinism");
    write_short_scenario(dir / "short.json", 0.15);
    CHECK(run_cli("simulate --scenario short.json --seed 99 --out a", dir).exit_code == 0);
    CHECK(run_cli("simulate --scenario short.json --seed 99 --out b", dir).exit_code == 0);
    CHECK(slurp(dir / "a/trace.csv") == slurp(dir / "b/trace.csv"));
    CHECK(slurp(dir / "a/metrics.json") == slurp(dir / "b/metrics.json"));

    CHECK(run_cli("simulate --scenario short.json --seed 100 --out c", dir).exit_code == 0);
    CHECK(slurp(dir / "a/trace.csv") != slurp(dir / "c/trace.csv"));
}

TEST_CASE("DRFLEX_SEED environment variable overrides the scenario seed") {
    const fs::path dir = fresh_dir("envseed");
    write_short_scenario(dir / "short.json", 0.15);
    CHECK(run_cli("simulate --scenario short.json --seed 7 --out a", dir).exit_code == 0);
    const fs::path log = dir / "stdout.txt";
    std::ostringstream cmd;
    cmd << "cd " << dir << " && DRFLEX_SEED=7 " << DRFLEX_CLI_PATH
        << " simulate --scenario short.json --out b > " << log << " 2>&1";
    REQUIRE(std::system(cmd.str().c_str()) == 0);
    CHECK(slurp(dir / "a/trace.csv") == slurp(dir / "b/trace.csv"));
}

TEST_CASE("sweep emits the kp,ki,value grid") {
    const fs::path dir = fresh_dir("sweep");
    const auto r = run_cli(
        "sweep --scenario default --loop inner:racks --kp 0.2:0.1:0.3 --ki 0.05:0.05:0.15 "
        "--metric index --out run --jobs 2",
        dir);
    CHECK(r.exit_code == 0);
    const std::string csv = slurp(dir / "run/sweep.csv");
    CHECK(csv.rfind("kp,ki,value\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 2x3 points

    // ki varies fastest
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    CHECK(line.rfind("0.200000,0.050000,", 0) == 0);
    std::getline(lines, line);
    CHECK(line.rfind("0.200000,0.100000,", 0) == 0);
}

TEST_CASE("single-point sweep at the rack design gains is stable") {
    const fs::path dir = fresh_dir("sweep_point");
    const auto r = run_cli(
        "sweep --scenario default --loop inner:racks --kp 0.2:1:0.2 --ki 0.05:1:0.05 "
        "--metric index --out run",
        dir);
    CHECK(r.exit_code == 0);
    const std::string csv = slurp(dir / "run/sweep.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one row
    const auto last_comma = csv.rfind(',');
    CHECK(std::stod(csv.substr(last_comma + 1)) < 0.0);
}

TEST_CASE("sweep rejects a zero step") {
    const fs::path dir = fresh_dir("sweep_bad");
    const auto r = run_cli(
        "sweep --scenario default --loop outer --kp 0.1:0:0.2 --ki 0.05:0.05:0.1 --out run",
        dir);
    CHECK(r.exit_code == 1);
}

TEST_CASE("stability benchmark prints the known index") {
    const fs::path dir = fresh_dir("stability");
    const auto r = run_cli("stability --benchmark hayes --out run", dir);
    CHECK(r.exit_code == 0);
    CHECK(r.stdout_text.find("-0.318") != std::string::npos);
    const std::string report = slurp(dir / "run/stability.json");
    CHECK(report.find("\"converged\": true") != std::string::npos);
}

TEST_CASE("schedule respects the cap and marks optimality") {
    const fs::path dir = fresh_dir("schedule");
    const auto r = run_cli("schedule --fleet default --target 55 --q 0 --out run", dir);
    CHECK(r.exit_code == 0);
    const std::string text = slurp(dir / "run/assignment.json");
    CHECK(text.find("\"optimal\": true") != std::string::npos);

    // objective <= cap
    const auto pos = text.find("\"objective\": ");
    REQUIRE(pos != std::string::npos);
    CHECK(std::stod(text.substr(pos + 13)) <= 55.0 + 1e-9);
}

TEST_CASE("schedule exits 2 on infeasible budgets") {
    const fs::path dir = fresh_dir("schedule_bad");
    const auto r = run_cli("schedule --fleet default --target 1 --q 0 --out run", dir);
    CHECK(r.exit_code == 2);
}

TEST_CASE("montecarlo with zero uncertainty emits identical rows") {
    const fs::path dir = fresh_dir("mc");
    const auto r = run_cli(
        "montecarlo --scenario default --uncertainty gain --pct 0 --n 10 --seed 7 "
        "--jobs 2 --out run",
        dir);
    CHECK(r.exit_code == 0);
    const std::string csv = slurp(dir / "run/montecarlo.csv");
    std::istringstream lines(csv);
    std::string header, first, line;
    std::getline(lines, header);
    CHECK(header == "sample,factor_racks,factor_hvac,factor_pv,index,h2");
    std::getline(lines, first);
    int rows = 1;
    const std::string tail = first.substr(first.find(','));
    while (std::getline(lines, line)) {
        CHECK(line.substr(line.find(',')) == tail);
        ++rows;
    }
    CHECK(rows == 10);
}

TEST_CASE("bode emits one row per tau") {
    const fs::path dir = fresh_dir("bode");
    const auto r = run_cli("bode --scenario default --tau 0:5:10 --out run", dir);
    CHECK(r.exit_code == 0);
    const std::string csv = slurp(dir / "run/margins.csv");
    CHECK(csv.rfind("tau,gain_margin,phase_margin,wgc,wpc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
