#include <benchmark/benchmark.h>

#include "voltpomdp/bql.hpp"

using namespace voltpomdp;

static void BM_SelectActionVpi(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto rng = make_rng(2);
    std::normal_distribution<double> g(0.0, 10.0);
    std::vector<double> mu(n), var(n);
    for (std::size_t i = 0; i < n; ++i) {
        mu[i] = g(rng);
        var[i] = 1.0 + std::abs(g(rng));
    }
    for (auto _ : state) benchmark::DoNotOptimize(select_action_vpi(mu, var));
}
BENCHMARK(BM_SelectActionVpi)->Arg(125)->Arg(3125);

static void BM_SelectActionQsample(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto rng = make_rng(3);
    std::vector<double> mu(n, 0.0), var(n, 4.0);
    for (auto _ : state) benchmark::DoNotOptimize(select_action_qsample(mu, var, rng));
}
BENCHMARK(BM_SelectActionQsample)->Arg(125)->Arg(3125);

BENCHMARK_MAIN();
