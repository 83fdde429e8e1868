#include "drflex/scenario_io.hpp"
#include "drflex/scheduler.hpp"

#include <benchmark/benchmark.h>

using namespace drflex;

namespace {

// the 31 + 60 device building with continuous HVAC/PV top-up
void BM_Schedule91(benchmark::State& state) {
    const FleetSpec fleet = default_fleet();
    double target = 40.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(schedule(fleet, target, 0.0).objective);
        target = target < 100.0 ? target + 0.7 : 40.0;
    }
}
BENCHMARK(BM_Schedule91);

void BM_ScheduleWithPrevious(benchmark::State& state) {
    const FleetSpec fleet = default_fleet();
    Assignment prev = schedule(fleet, 55.0, 0.0);
    double target = 40.0;
    for (auto _ : state) {
        prev = schedule(fleet, target, 0.0, &prev);
        benchmark::DoNotOptimize(prev.objective);
        target = target < 100.0 ? target + 0.7 : 40.0;
    }
}
BENCHMARK(BM_ScheduleWithPrevious);

}  // namespace
