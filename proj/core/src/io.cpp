#include "drflex/io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace drflex {

std::string format_fixed(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    return out;
}

}  // namespace

void write_trace_csv(const std::filesystem::path& path, const SimTrace& trace) {
    std::ofstream out = open_out(path);
    out << "t,target,obs,outer_cmd";
    for (std::size_t g = 0; g < trace.group_names.size(); ++g)
        out << ",g" << g + 1 << "_ref,g" << g + 1 << "_p";
    out << "\n";
    for (std::size_t k = 0; k < trace.size(); ++k) {
        out << format_fixed(trace.t[k]) << ',' << format_fixed(trace.target[k]) << ','
            << format_fixed(trace.aggregate[k]) << ',' << format_fixed(trace.outer_cmd[k]);
        for (std::size_t g = 0; g < trace.group_names.size(); ++g)
            out << ',' << format_fixed(trace.group_ref[g][k]) << ','
                << format_fixed(trace.group_power[g][k]);
        out << "\n";
    }
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep) {
    std::ofstream out = open_out(path);
    out << "kp,ki,value\n";
    for (std::size_t i = 0; i < sweep.kp_grid.size(); ++i)
        for (std::size_t j = 0; j < sweep.ki_grid.size(); ++j)
            out << format_fixed(sweep.kp_grid[i]) << ',' << format_fixed(sweep.ki_grid[j]) << ','
                << format_fixed(sweep.at(i, j)) << "\n";
}

void write_margin_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<double, MarginReport>>& sweep) {
    std::ofstream out = open_out(path);
    out << "tau,gain_margin,phase_margin,wgc,wpc\n";
    for (const auto& [tau, rep] : sweep)
        out << format_fixed(tau) << ',' << format_fixed(rep.gain_margin) << ','
            << format_fixed(rep.phase_margin_deg) << ',' << format_fixed(rep.gain_crossover)
            << ',' << format_fixed(rep.phase_crossover) << "\n";
}

void write_monte_carlo_csv(const std::filesystem::path& path, const MonteCarloSummary& summary,
                           const std::vector<std::string>& group_names) {
    std::ofstream out = open_out(path);
    out << "sample";
    for (const auto& name : group_names) out << ",factor_" << name;
    out << ",index,h2\n";
    for (std::size_t i = 0; i < summary.samples.size(); ++i) {
        const auto& s = summary.samples[i];
        out << i;
        for (double f : s.factors) out << ',' << format_fixed(f);
        out << ',' << format_fixed(s.index) << ',' << format_fixed(s.h2) << "\n";
    }
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

std::string file_hash_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a64_hex(ss.str());
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["scenario"] = manifest.scenario;
    j["scenario_hash"] = manifest.scenario_hash;
    j["seed"] = manifest.seed;
    j["version"] = manifest.version;
    j["outputs"] = manifest.outputs;
    j["wall_seconds"] = manifest.wall_seconds;
    std::ofstream out = open_out(path);
    out << j.dump(2) << "\n";
}

}  // namespace drflex
