#include "drflex/scenario_io.hpp"
#include "drflex/testbed.hpp"

#include <benchmark/benchmark.h>

using namespace drflex;

namespace {

void BM_ClosedLoop(benchmark::State& state) {
    Scenario sc = default_scenario();
    sc.grid.duration = 60.0;
    for (auto _ : state) benchmark::DoNotOptimize(simulate_closed_loop(sc).aggregate.back());
}
BENCHMARK(BM_ClosedLoop);

void BM_ClosedLoopFleet(benchmark::State& state) {
    Scenario sc = default_fleet_scenario();
    sc.grid.duration = 60.0;
    for (auto _ : state) benchmark::DoNotOptimize(simulate_closed_loop(sc).aggregate.back());
}
BENCHMARK(BM_ClosedLoopFleet);

void BM_DdeStepResponse(benchmark::State& state) {
    const LoopRealization loop = assemble_full_system(default_scenario().control_model());
    for (auto _ : state)
        benchmark::DoNotOptimize(dde_step_response(loop, 1.0, 100.0, 0.004).y.back());
}
BENCHMARK(BM_DdeStepResponse);

}  // namespace
