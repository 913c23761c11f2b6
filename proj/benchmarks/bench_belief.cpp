#include <benchmark/benchmark.h>

#include "voltpomdp/belief.hpp"
#include "voltpomdp/observation.hpp"

using namespace voltpomdp;

static void BM_UpdateBelief(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    auto rng = make_rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd p(n, n);
    for (auto& x : p.reshaped()) x = u(rng);
    p.array().colwise() /= p.rowwise().sum().array();
    Eigen::VectorXd like(n);
    for (auto& x : like) x = u(rng);
    Eigen::VectorXd b = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (auto _ : state) {
        b = update_belief(b, p, like);
        benchmark::DoNotOptimize(b.data());
    }
}
BENCHMARK(BM_UpdateBelief)->Arg(10)->Arg(20)->Arg(125);

static void BM_ObservationTable(benchmark::State& state) {
    Discretization d;
    d.n_levels = static_cast<int>(state.range(0));
    d.monitored_buses = {5, 6, 8};
    const ObservationModel model;
    for (auto _ : state) benchmark::DoNotOptimize(observation_table(model, d));
}
BENCHMARK(BM_ObservationTable)->Arg(10)->Arg(20);

BENCHMARK_MAIN();
