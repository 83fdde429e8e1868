#pragma once

#include "drflex/model.hpp"
#include "drflex/stability.hpp"
#include "drflex/testbed.hpp"

#include <complex>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace drflex {

struct ResponseMetrics {
    double initial_response = 0.0;  ///< s until the output starts toward the target
    double ramp_time = 0.0;         ///< s until it is sustained inside the band; inf allowed
    double h2 = 0.0;                ///< integral of squared error [kW^2 s]
    double ss_error = 0.0;          ///< mean |error| over the final 20% of the hold [kW]
    double ss_oscillation = 0.0;    ///< peak-to-peak over the same window [kW]
};

/// Trapezoidal integral of (y - target)^2 over [t[0], t[0] + t_m]. The trace
/// must cover the full horizon.
double h2_metric(std::span<const double> t, std::span<const double> y, double target,
                 double t_m);

struct StepEvent {
    double time = 0.0;
    double old_target = 0.0;
    double new_target = 0.0;
    double hold_end = 0.0;  ///< next target change, or end of trace
};

/// Target changes in the trace, each with its hold window.
std::vector<StepEvent> find_step_events(const SimTrace& trace);

struct MetricThresholds {
    double initial_frac = 0.02;  ///< movement detection, fraction of the step
    double band_frac = 0.05;     ///< ramp band, fraction of the step
    double sustain = 2.0;        ///< s the band must hold
    double h2_horizon = 100.0;   ///< s (clipped to the hold)
};

ResponseMetrics response_metrics(const SimTrace& trace, const StepEvent& event,
                                 const MetricThresholds& thr = {});

struct MarginReport {
    double gain_margin = 0.0;       ///< dimensionless; inf when no -180 crossing
    double phase_margin_deg = 0.0;  ///< degrees; inf when no unity crossing
    double gain_crossover = 0.0;    ///< rad/s, inf when absent
    double phase_crossover = 0.0;   ///< rad/s, inf when absent
};

/// Classical margins of a scalar loop response evaluated on a log frequency
/// grid with bisection-refined crossings; the phase is unwrapped by recursive
/// subdivision so delay-induced fast phase drops are followed correctly.
MarginReport bode_margins_of(const std::function<std::complex<double>(double)>& loop,
                             double omega_lo = 1e-4, double omega_hi = 1e2, int points = 2000);

/// Margins of the two-level open loop with every group delay set to tau.
MarginReport bode_margins(const TwoLevelModel& model, double common_delay);

std::vector<std::pair<double, MarginReport>> margin_sweep(const TwoLevelModel& model,
                                                          std::span<const double> taus);

enum class UncertaintyKind { gain, delay };

struct MonteCarloSample {
    std::vector<double> factors;  ///< per-group multiplier on the uncertain parameter
    double index = 0.0;
    double h2 = 0.0;
    bool ok = false;
    std::string error;
};

struct MonteCarloOptions {
    double t_m = 100.0;    ///< H2 horizon [s]
    double step = 1.0;     ///< target step magnitude for the H2 run
    double dt_max = 0.004; ///< DDE step ceiling [s]
    int cheb_n = 20;
    int jobs = 0;          ///< 0 = hardware concurrency
};

struct MonteCarloSummary {
    UncertaintyKind kind = UncertaintyKind::gain;
    double pct = 0.0;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<MonteCarloSample> samples;
    double stable_fraction = 0.0;
    int failures = 0;
    double index_min = 0.0, index_max = 0.0, index_mean = 0.0;
    double h2_min = 0.0, h2_max = 0.0, h2_mean = 0.0;
};

/// Per sample, each group's gain (or delay) is scaled by an independent
/// uniform factor in [1-pct, 1+pct]; the stability index and the H2 of the
/// unit step response are computed on the perturbed linear model. Sample i is
/// seeded from (seed, i), so results are independent of evaluation order.
MonteCarloSummary monte_carlo(const TwoLevelModel& model, UncertaintyKind kind, double pct,
                              int n, std::uint64_t seed, const MonteCarloOptions& opts = {});

/// Sweep metric: H2 of the unit step response over [0, t_m] via simulate_dde;
/// +inf when the response diverges.
SweepMetric h2_step_metric(double step = 1.0, double t_m = 100.0, double dt_max = 0.004);

}  // namespace drflex
