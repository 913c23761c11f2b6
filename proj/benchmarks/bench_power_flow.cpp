#include <benchmark/benchmark.h>

#include "voltpomdp/case_io.hpp"
#include "voltpomdp/power_flow.hpp"

using namespace voltpomdp;

static void BM_SolvePowerFlow(benchmark::State& state, const char* name) {
    const auto grid = load_case(std::string(VOLTPOMDP_CASES_DIR) + "/" + name + ".json");
    const auto ybus = build_admittance(grid);
    std::vector<double> setpoints(grid.generators.size(), 1.02);
    const LoadScale scale{{grid.buses.back().id, 1.1}};
    for (auto _ : state) {
        auto sol = solve_power_flow(grid, ybus, setpoints, scale);
        benchmark::DoNotOptimize(sol.bus_voltages.data());
    }
}
BENCHMARK_CAPTURE(BM_SolvePowerFlow, wscc9, "wscc9");
BENCHMARK_CAPTURE(BM_SolvePowerFlow, ieee14, "ieee14");

static void BM_BuildAdmittance(benchmark::State& state) {
    const auto grid = load_case(std::string(VOLTPOMDP_CASES_DIR) + "/ieee14.json");
    for (auto _ : state) benchmark::DoNotOptimize(build_admittance(grid));
}
BENCHMARK(BM_BuildAdmittance);

BENCHMARK_MAIN();
