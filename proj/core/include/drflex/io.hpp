#pragma once

#include "drflex/analysis.hpp"
#include "drflex/scheduler.hpp"
#include "drflex/stability.hpp"
#include "drflex/testbed.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace drflex {

/// 6-decimal fixed point; infinities and NaN render as "inf"/"-inf"/"nan".
std::string format_fixed(double v);

/// Header t,target,obs,outer_cmd,g1_ref,g1_p,...; one row per sample.
void write_trace_csv(const std::filesystem::path& path, const SimTrace& trace);

/// Header kp,ki,value; row-major with ki varying fastest.
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep);

/// Header tau,gain_margin,phase_margin,wgc,wpc.
void write_margin_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<double, MarginReport>>& sweep);

/// Header sample,factor_<group>...,index,h2.
void write_monte_carlo_csv(const std::filesystem::path& path, const MonteCarloSummary& summary,
                           const std::vector<std::string>& group_names);

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);
std::string file_hash_hex(const std::filesystem::path& path);

/// Reproducibility record written next to every CLI artifact.
struct RunManifest {
    std::string command;
    std::string scenario;       ///< path or builtin name
    std::string scenario_hash;  ///< fnv1a64 of the scenario bytes
    std::uint64_t seed = 0;
    std::string version;
    std::vector<std::string> outputs;  ///< file names, relative to the manifest
    double wall_seconds = 0.0;
};

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace drflex
