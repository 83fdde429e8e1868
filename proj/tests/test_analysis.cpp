#include "drflex/analysis.hpp"

#include "drflex/model.hpp"
#include "drflex/scenario_io.hpp"
#include "drflex/testbed.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace drflex;

namespace {

SimTrace synthetic_trace(double dt, double duration,
                         const std::function<double(double)>& target,
                         const std::function<double(double)>& output) {
    SimTrace tr;
    tr.dt = dt;
    tr.group_names = {"g"};
    tr.group_ref.resize(1);
    tr.group_power.resize(1);
    for (std::size_t i = 0; i * dt <= duration + 1e-12; ++i) {
        const double t = i * dt;
        tr.t.push_back(t);
        tr.target.push_back(target(t));
        tr.aggregate.push_back(output(t));
        tr.outer_cmd.push_back(0.0);
        tr.group_ref[0].push_back(0.0);
        tr.group_power[0].push_back(output(t));
    }
    return tr;
}

}  // namespace

TEST_CASE("h2 metric on closed forms") {
    std::vector<double> t, y;
    for (double ti = 0.0; ti <= 120.0 + 1e-9; ti += 0.01) {
        t.push_back(ti);
        y.push_back(5.0);
    }
    CHECK(h2_metric(t, y, 5.0, 100.0) == 0.0);

    for (auto& v : y) v = 7.0;  // constant error of 2
    CHECK(h2_metric(t, y, 5.0, 100.0) == doctest::Approx(400.0).epsilon(1e-12));

    for (std::size_t i = 0; i < t.size(); ++i) y[i] = 5.0 + std::exp(-t[i] / 5.0);
    CHECK(h2_metric(t, y, 5.0, 100.0) == doctest::Approx(2.5).epsilon(1e-3));

    std::vector<double> t_short(t.begin(), t.begin() + 100);
    std::vector<double> y_short(y.begin(), y.begin() + 100);
    CHECK_THROWS_AS(h2_metric(t_short, y_short, 5.0, 100.0), std::invalid_argument);
}

TEST_CASE("response metrics on a constructed ramp") {
    // flat for 1.5 s after the step, linear ramp reaching the target at 9 s
    auto target = [](double t) { return t < 10.0 ? 0.0 : 10.0; };
    auto output = [](double t) {
        const double s = t - 10.0;
        if (s <= 1.5) return 0.0;
        if (s >= 9.0) return 10.0;
        return 10.0 * (s - 1.5) / 7.5;
    };
    const SimTrace tr = synthetic_trace(0.01, 60.0, target, output);
    const auto events = find_step_events(tr);
    REQUIRE(events.size() == 1);
    CHECK(events[0].time == doctest::Approx(10.0));
    CHECK(events[0].hold_end == doctest::Approx(60.0));

    const auto m = response_metrics(tr, events[0]);
    CHECK(m.initial_response > 1.5);  // movement threshold sits 2% up the ramp
    CHECK(m.initial_response < 1.8);
    CHECK(m.ramp_time > 8.0);  // band entry at 95% of the ramp
    CHECK(m.ramp_time < 9.2);
    CHECK(m.ss_error == doctest::Approx(0.0));
    CHECK(m.ss_oscillation == doctest::Approx(0.0));
}

TEST_CASE("ramp time is infinite when the band is never sustained") {
    auto target = [](double t) { return t < 10.0 ? 0.0 : 10.0; };
    auto output = [](double t) { return t < 10.0 ? 0.0 : 8.0; };  // stuck 20% short
    const SimTrace tr = synthetic_trace(0.01, 60.0, target, output);
    const auto m = response_metrics(tr, find_step_events(tr)[0]);
    CHECK(std::isinf(m.ramp_time));
    CHECK(m.ss_error == doctest::Approx(2.0));
}

TEST_CASE("bode margins of the pure integrator with dead time") {
    // L(s) = e^{-s tau} / s with tau = 1
    auto loop = [](double w) {
        return std::exp(std::complex<double>(0.0, -w)) / std::complex<double>(0.0, w);
    };
    const MarginReport rep = bode_margins_of(loop);
    CHECK(rep.gain_crossover == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(rep.phase_margin_deg == doctest::Approx(90.0 - 180.0 / std::numbers::pi).epsilon(1e-4));
    CHECK(rep.phase_crossover == doctest::Approx(std::numbers::pi / 2.0).epsilon(1e-5));
    CHECK(rep.gain_margin == doctest::Approx(std::numbers::pi / 2.0).epsilon(1e-5));
}

TEST_CASE("margins without a crossover are infinite") {
    // L(s) = 0.5 / (s + 1): never reaches magnitude 1 nor -180 degrees
    auto loop = [](double w) { return 0.5 / std::complex<double>(1.0, w); };
    const MarginReport rep = bode_margins_of(loop);
    CHECK(std::isinf(rep.gain_margin));
    CHECK(std::isinf(rep.phase_margin_deg));
    CHECK(std::isinf(rep.gain_crossover));
    CHECK(std::isinf(rep.phase_crossover));
}

TEST_CASE("delay deteriorates the margins of the default model") {
    const TwoLevelModel model = default_scenario().control_model();
    const MarginReport m0 = bode_margins(model, 0.0);
    const MarginReport m2 = bode_margins(model, 2.0);
    CHECK(m0.gain_margin > m2.gain_margin);
    CHECK(m0.phase_margin_deg > m2.phase_margin_deg);
}

TEST_CASE("phase margin drops by exactly the crossover phase of the delay") {
    // with zeroed inner PI gains the loop magnitude is delay-independent
    TwoLevelModel m;
    GroupModel g;
    g.name = "g";
    g.plant = {1.0, 0.5};
    g.delay = 0.0;
    g.controller = make_ffpi({0.0, 0.0}, 0.5, 1.0, 0.1);
    g.participation = 1.0;
    m.groups = {g};
    m.outer = {0.1, 0.2};

    const double tau = 3.0;
    const MarginReport m0 = bode_margins(m, 0.0);
    const MarginReport mt = bode_margins(m, tau);
    CHECK(mt.gain_crossover == doctest::Approx(m0.gain_crossover).epsilon(1e-6));
    CHECK(m0.phase_margin_deg - mt.phase_margin_deg ==
          doctest::Approx(180.0 / std::numbers::pi * m0.gain_crossover * tau).epsilon(1e-4));
}

TEST_CASE("margin sweep is monotone and sign-consistent with the index") {
    const TwoLevelModel model = default_scenario().control_model();
    std::vector<double> taus;
    for (int i = 0; i <= 10; ++i) taus.push_back(i);
    const auto sweep = margin_sweep(model, taus);
    REQUIRE(sweep.size() == 11);

    for (std::size_t i = 1; i < sweep.size(); ++i) {
        CHECK(sweep[i].second.gain_margin <= sweep[i - 1].second.gain_margin * (1.0 + 1e-9));
        CHECK(sweep[i].second.phase_margin_deg <=
              sweep[i - 1].second.phase_margin_deg * (1.0 + 1e-9));
    }

    for (const auto& [tau, rep] : sweep) {
        TwoLevelModel common = model;
        for (auto& g : common.groups) g.delay = tau;
        const auto sr = stability_index(assemble_full_system(common).sys);
        const bool margins_positive = rep.gain_margin > 1.0 && rep.phase_margin_deg > 0.0;
        CHECK(margins_positive == (sr.index < 0.0));
    }
}

TEST_CASE("single-point margin sweep equals bode_margins") {
    const TwoLevelModel model = default_scenario().control_model();
    const auto sweep = margin_sweep(model, std::vector<double>{1.5});
    REQUIRE(sweep.size() == 1);
    const MarginReport direct = bode_margins(model, 1.5);
    CHECK(sweep[0].second.gain_margin == doctest::Approx(direct.gain_margin));
    CHECK(sweep[0].second.phase_margin_deg == doctest::Approx(direct.phase_margin_deg));
}

TEST_CASE("monte carlo sampling") {
    const TwoLevelModel model = default_scenario().control_model();
    MonteCarloOptions opts;
    opts.jobs = 2;

    SUBCASE("zero uncertainty reproduces the nominal model") {
        const auto sum = monte_carlo(model, UncertaintyKind::gain, 0.0, 8, 11, opts);
        CHECK(sum.failures == 0);
        const auto nominal = stability_index(assemble_full_system(model).sys);
        for (const auto& s : sum.samples) {
            CHECK(s.ok);
            for (double f : s.factors) CHECK(f == 1.0);
            CHECK(s.index == doctest::Approx(nominal.index).epsilon(1e-12));
        }
        CHECK(sum.index_min == sum.index_max);
    }

    SUBCASE("same seed gives identical summaries, independent of workers") {
        MonteCarloOptions serial = opts;
        serial.jobs = 1;
        const auto a = monte_carlo(model, UncertaintyKind::delay, 0.2, 24, 5, opts);
        const auto b = monte_carlo(model, UncertaintyKind::delay, 0.2, 24, 5, serial);
        REQUIRE(a.samples.size() == b.samples.size());
        for (std::size_t i = 0; i < a.samples.size(); ++i) {
            CHECK(a.samples[i].factors == b.samples[i].factors);
            CHECK(a.samples[i].index == b.samples[i].index);
            CHECK(a.samples[i].h2 == b.samples[i].h2);
        }
        CHECK(a.stable_fraction == b.stable_fraction);

        const auto c = monte_carlo(model, UncertaintyKind::delay, 0.2, 24, 6, opts);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.samples.size(); ++i)
            any_diff = any_diff || a.samples[i].factors != c.samples[i].factors;
        CHECK(any_diff);
    }

    SUBCASE("factors stay inside the uncertainty band") {
        const auto sum = monte_carlo(model, UncertaintyKind::gain, 0.2, 40, 3, opts);
        for (const auto& s : sum.samples)
            for (double f : s.factors) {
                CHECK(f >= 0.8);
                CHECK(f <= 1.2);
            }
    }

    SUBCASE("parameter validation") {
        CHECK_THROWS_AS(monte_carlo(model, UncertaintyKind::gain, 0.6, 4, 1, opts),
                        std::invalid_argument);
        CHECK_THROWS_AS(monte_carlo(model, UncertaintyKind::gain, 0.1, 0, 1, opts),
                        std::invalid_argument);
    }
}

TEST_CASE("h2 sweep metric flags divergence as +inf") {
    GroupModel g;
    g.name = "racks";
    g.plant = {0.9359, 0.0890};
    g.delay = 5.0;
    g.controller = make_ffpi({0.2, 1.0}, 0.0890, 0.9359, 0.0445);  // unstable inner loop
    g.participation = 1.0;
    const auto metric = h2_step_metric(1.0, 100.0, 0.004);
    CHECK(std::isinf(metric(assemble_inner_loop(g))));

    g.controller.pi.ki = 0.05;
    CHECK(std::isfinite(metric(assemble_inner_loop(g))));
}
