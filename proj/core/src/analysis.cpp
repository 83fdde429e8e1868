#include "drflex/analysis.hpp"

#include "drflex/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace drflex {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double interp_at(std::span<const double> t, std::span<const double> y, double ti) {
    const auto it = std::lower_bound(t.begin(), t.end(), ti);
    if (it == t.begin()) return y.front();
    if (it == t.end()) return y.back();
    const std::size_t i = static_cast<std::size_t>(it - t.begin());
    const double w = (ti - t[i - 1]) / (t[i] - t[i - 1]);
    return y[i - 1] + w * (y[i] - y[i - 1]);
}

// trapezoid of (y - target)^2 over [t0, t1], linear interpolation at the ends
double squared_error_integral(std::span<const double> t, std::span<const double> y,
                              double target, double t0, double t1) {
    double acc = 0.0;
    auto sq = [&](double v) { return (v - target) * (v - target); };
    double prev_t = t0;
    double prev_e = sq(interp_at(t, y, t0));
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] <= t0) continue;
        const double ti = std::min(t[i], t1);
        const double ei = ti == t[i] ? sq(y[i]) : sq(interp_at(t, y, ti));
        acc += 0.5 * (prev_e + ei) * (ti - prev_t);
        prev_t = ti;
        prev_e = ei;
        if (t[i] >= t1) break;
    }
    return acc;
}

}  // namespace

double h2_metric(std::span<const double> t, std::span<const double> y, double target,
                 double t_m) {
    if (t.size() != y.size() || t.size() < 2)
        throw std::invalid_argument("h2_metric: need matching t/y samples");
    if (!(t_m > 0.0)) throw std::invalid_argument("h2_metric: t_m must be > 0");
    const double t_end = t.front() + t_m;
    if (t.back() < t_end * (1.0 - 1e-9) - 1e-12)
        throw std::invalid_argument("h2_metric: trace shorter than the metric horizon");
    return squared_error_integral(t, y, target, t.front(), t_end);
}

std::vector<StepEvent> find_step_events(const SimTrace& trace) {
    std::vector<StepEvent> events;
    for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace.target[i] != trace.target[i - 1]) {
            if (!events.empty()) events.back().hold_end = trace.t[i];
            events.push_back({trace.t[i], trace.target[i - 1], trace.target[i], trace.t.back()});
        }
    }
    return events;
}

ResponseMetrics response_metrics(const SimTrace& trace, const StepEvent& event,
                                 const MetricThresholds& thr) {
    const double delta = event.new_target - event.old_target;
    if (delta == 0.0 || event.hold_end <= event.time)
        throw std::invalid_argument("response_metrics: degenerate step event");

    std::size_t i0 = trace.size(), i1 = 0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (trace.t[i] >= event.time && i0 == trace.size()) i0 = i;
        if (trace.t[i] <= event.hold_end) i1 = i;
    }
    if (i0 >= trace.size() || i1 <= i0)
        throw std::invalid_argument("response_metrics: step not covered by the trace");

    const auto& y = trace.aggregate;
    const double y_pre = y[i0];
    const double sign = delta > 0.0 ? 1.0 : -1.0;

    ResponseMetrics m;
    m.initial_response = kInf;
    const double move = thr.initial_frac * std::abs(delta);
    for (std::size_t i = i0; i <= i1; ++i) {
        if (sign * (y[i] - y_pre) > move) {
            m.initial_response = trace.t[i] - event.time;
            break;
        }
    }

    m.ramp_time = kInf;
    const double band = thr.band_frac * std::abs(delta);
    std::size_t run_start = trace.size();
    for (std::size_t i = i0; i <= i1; ++i) {
        if (std::abs(y[i] - event.new_target) <= band) {
            if (run_start == trace.size()) run_start = i;
            if (trace.t[i] - trace.t[run_start] >= thr.sustain) {
                m.ramp_time = trace.t[run_start] - event.time;
                break;
            }
        } else {
            run_start = trace.size();
        }
    }

    const double ss_start = event.hold_end - 0.2 * (event.hold_end - event.time);
    double err_sum = 0.0, y_min = kInf, y_max = -kInf;
    std::size_t count = 0;
    for (std::size_t i = i0; i <= i1; ++i) {
        if (trace.t[i] < ss_start) continue;
        err_sum += std::abs(y[i] - event.new_target);
        y_min = std::min(y_min, y[i]);
        y_max = std::max(y_max, y[i]);
        ++count;
    }
    if (count > 0) {
        m.ss_error = err_sum / static_cast<double>(count);
        m.ss_oscillation = y_max - y_min;
    }

    const double h2_end = std::min(event.time + thr.h2_horizon, event.hold_end);
    m.h2 = squared_error_integral(trace.t, y, event.new_target, event.time, h2_end);
    return m;
}

// ---------------------------------------------------------------------------
// Bode margins
// ---------------------------------------------------------------------------

namespace {

struct LoopPoint {
    double omega = 0.0;
    double mag = 0.0;
    double phase = 0.0;  // unwrapped, radians
};

// phase continued from a known neighbouring value: pick the 2*pi branch
// closest to the reference
double continued_phase(std::complex<double> value, double reference) {
    const double raw = std::arg(value);
    const double two_pi = 2.0 * std::numbers::pi;
    const double k = std::round((reference - raw) / two_pi);
    return raw + k * two_pi;
}

// appends points on (w_a, w_b] keeping phase steps below pi/2 by recursive
// midpoint subdivision (log spacing)
void refine_segment(const std::function<std::complex<double>(double)>& loop, double w_a,
                    double phase_a, double w_b, std::vector<LoopPoint>& out, int depth) {
    const std::complex<double> vb = loop(w_b);
    const double direct = continued_phase(vb, phase_a);
    if (std::abs(direct - phase_a) <= std::numbers::pi / 2.0 || depth >= 36) {
        out.push_back({w_b, std::abs(vb), direct});
        return;
    }
    const double w_mid = std::sqrt(w_a * w_b);
    refine_segment(loop, w_a, phase_a, w_mid, out, depth + 1);
    refine_segment(loop, w_mid, out.back().phase, w_b, out, depth + 1);
}

}  // namespace

MarginReport bode_margins_of(const std::function<std::complex<double>(double)>& loop,
                             double omega_lo, double omega_hi, int points) {
    if (!(omega_lo > 0.0) || !(omega_hi > omega_lo) || points < 2)
        throw std::invalid_argument("bode_margins: invalid frequency grid");

    std::vector<LoopPoint> pts;
    pts.reserve(points);
    const std::complex<double> v0 = loop(omega_lo);
    pts.push_back({omega_lo, std::abs(v0), std::arg(v0)});
    const double ratio = std::pow(omega_hi / omega_lo, 1.0 / (points - 1));
    double w = omega_lo;
    for (int i = 1; i < points; ++i) {
        const double w_next = (i == points - 1) ? omega_hi : w * ratio;
        refine_segment(loop, w, pts.back().phase, w_next, pts, 0);
        w = w_next;
    }

    MarginReport rep;
    rep.gain_margin = kInf;
    rep.phase_margin_deg = kInf;
    rep.gain_crossover = kInf;
    rep.phase_crossover = kInf;

    constexpr double kOmegaTol = 1e-6;  // rad/s bisection width

    // first crossing of |L| through 1 from above
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i - 1].mag >= 1.0 && pts[i].mag < 1.0) {
            double a = pts[i - 1].omega, b = pts[i].omega;
            double phase_a = pts[i - 1].phase;
            while (b - a > kOmegaTol) {
                const double mid = 0.5 * (a + b);
                const std::complex<double> vm = loop(mid);
                const double pm = continued_phase(vm, phase_a);
                if (std::abs(vm) >= 1.0) {
                    a = mid;
                    phase_a = pm;
                } else {
                    b = mid;
                }
            }
            const double phase_gc = continued_phase(loop(0.5 * (a + b)), phase_a);
            rep.gain_crossover = 0.5 * (a + b);
            rep.phase_margin_deg = (phase_gc + std::numbers::pi) * 180.0 / std::numbers::pi;
            break;
        }
    }

    // first crossing of the unwrapped phase through -180 degrees
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i - 1].phase > -std::numbers::pi && pts[i].phase <= -std::numbers::pi) {
            double a = pts[i - 1].omega, b = pts[i].omega;
            double phase_a = pts[i - 1].phase;
            while (b - a > kOmegaTol) {
                const double mid = 0.5 * (a + b);
                const double pm = continued_phase(loop(mid), phase_a);
                if (pm > -std::numbers::pi) {
                    a = mid;
                    phase_a = pm;
                } else {
                    b = mid;
                }
            }
            rep.phase_crossover = 0.5 * (a + b);
            rep.gain_margin = 1.0 / std::abs(loop(rep.phase_crossover));
            break;
        }
    }
    return rep;
}

MarginReport bode_margins(const TwoLevelModel& model, double common_delay) {
    if (!(common_delay >= 0.0)) throw std::invalid_argument("bode_margins: tau must be >= 0");
    TwoLevelModel m = model;
    for (auto& g : m.groups) g.delay = common_delay;
    m.validate();
    return bode_margins_of([m](double omega) {
        const std::complex<double> s(0.0, omega);
        std::complex<double> h(0.0, 0.0);
        for (const auto& g : m.groups) h += g.participation * inner_loop_transfer(g, s);
        return pi_transfer(m.outer, s) * h;
    });
}

std::vector<std::pair<double, MarginReport>> margin_sweep(const TwoLevelModel& model,
                                                          std::span<const double> taus) {
    if (taus.empty()) throw std::invalid_argument("margin_sweep: empty tau grid");
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!(taus[i] >= 0.0) || (i > 0 && taus[i] <= taus[i - 1]))
            throw std::invalid_argument("margin_sweep: taus must be ascending and >= 0");
    }
    std::vector<std::pair<double, MarginReport>> out(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i)
        out[i] = {taus[i], bode_margins(model, taus[i])};
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo robustness
// ---------------------------------------------------------------------------

namespace {

// same blow-up guard as the device simulator: |y| beyond 1e6 kW is divergence
double h2_of_step(const LoopRealization& loop, double step, double t_m, double dt_max) {
    const StepResponse resp = dde_step_response(loop, step, t_m, dt_max);
    for (double v : resp.y)
        if (!std::isfinite(v) || std::abs(v) > 1e6) return kInf;
    return squared_error_integral(resp.t, resp.y, step, 0.0, t_m);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (i + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

SweepMetric h2_step_metric(double step, double t_m, double dt_max) {
    return [=](const LoopRealization& loop) { return h2_of_step(loop, step, t_m, dt_max); };
}

MonteCarloSummary monte_carlo(const TwoLevelModel& model, UncertaintyKind kind, double pct,
                              int n, std::uint64_t seed, const MonteCarloOptions& opts) {
    model.validate();
    if (n < 1) throw std::invalid_argument("monte_carlo: n must be >= 1");
    if (!(pct >= 0.0) || pct > 0.5)
        throw std::invalid_argument("monte_carlo: pct must lie in [0, 0.5]");

    MonteCarloSummary sum;
    sum.kind = kind;
    sum.pct = pct;
    sum.n = n;
    sum.seed = seed;
    sum.samples.resize(n);

    const std::size_t m = model.groups.size();
    parallel_for(
        static_cast<std::size_t>(n),
        [&](std::size_t i) {
            MonteCarloSample& s = sum.samples[i];
            std::mt19937_64 rng(mix_seed(seed, i));
            std::uniform_real_distribution<double> uni(1.0 - pct, 1.0 + pct);
            s.factors.resize(m);
            for (std::size_t g = 0; g < m; ++g) s.factors[g] = pct == 0.0 ? 1.0 : uni(rng);

            try {
                TwoLevelModel sample_model = model;
                for (std::size_t g = 0; g < m; ++g) {
                    if (kind == UncertaintyKind::gain)
                        sample_model.groups[g].plant.gain *= s.factors[g];
                    else
                        sample_model.groups[g].delay *= s.factors[g];
                }
                const LoopRealization loop = assemble_full_system(sample_model);
                StabilityOptions sopts;
                sopts.n = opts.cheb_n;
                const StabilityReport rep = stability_index(loop.sys, sopts);
                if (!rep.converged)
                    throw std::runtime_error("stability index did not converge");
                s.index = rep.index;
                s.h2 = h2_of_step(loop, opts.step, opts.t_m, opts.dt_max);
                s.ok = true;
            } catch (const std::exception& e) {
                s.ok = false;
                s.error = e.what();
            }
        },
        opts.jobs);

    int stable = 0;
    double imin = kInf, imax = -kInf, isum = 0.0;
    double hmin = kInf, hmax = -kInf, hsum = 0.0;
    int counted = 0, h2_counted = 0;
    for (const auto& s : sum.samples) {
        if (!s.ok) {
            ++sum.failures;
            continue;
        }
        ++counted;
        if (s.index < 0.0) ++stable;
        imin = std::min(imin, s.index);
        imax = std::max(imax, s.index);
        isum += s.index;
        if (std::isfinite(s.h2)) {
            hmin = std::min(hmin, s.h2);
            hmax = std::max(hmax, s.h2);
            hsum += s.h2;
            ++h2_counted;
        }
    }
    sum.stable_fraction = static_cast<double>(stable) / static_cast<double>(n);
    if (counted > 0) {
        sum.index_min = imin;
        sum.index_max = imax;
        sum.index_mean = isum / counted;
    }
    if (h2_counted > 0) {
        sum.h2_min = hmin;
        sum.h2_max = hmax;
        sum.h2_mean = hsum / h2_counted;
    }
    return sum;
}

}  // namespace drflex
