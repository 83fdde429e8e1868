#include "drflex/model.hpp"
#include "drflex/scenario_io.hpp"
#include "drflex/stability.hpp"

#include <benchmark/benchmark.h>

using namespace drflex;

namespace {

DelaySystem hayes() {
    Eigen::MatrixXd a0(1, 1), a1(1, 1);
    a0 << 0.0;
    a1 << -1.0;
    return make_delay_system(a0, {{a1, 1.0}});
}

void BM_StabilityHayes(benchmark::State& state) {
    const DelaySystem sys = hayes();
    StabilityOptions opts;
    opts.n = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(stability_index(sys, opts).index);
}
BENCHMARK(BM_StabilityHayes)->Arg(8)->Arg(20)->Arg(32);

void BM_StabilityFullSystem(benchmark::State& state) {
    const TwoLevelModel model = default_scenario().control_model();
    const DelaySystem sys = assemble_full_system(model).sys;
    StabilityOptions opts;
    opts.n = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(stability_index(sys, opts).index);
}
BENCHMARK(BM_StabilityFullSystem)->Arg(20);

void BM_Discretize(benchmark::State& state) {
    const TwoLevelModel model = default_scenario().control_model();
    const DelaySystem sys = assemble_full_system(model).sys;
    for (auto _ : state)
        benchmark::DoNotOptimize(discretize(sys, static_cast<int>(state.range(0))).a_n.sum());
}
BENCHMARK(BM_Discretize)->Arg(20);

}  // namespace
