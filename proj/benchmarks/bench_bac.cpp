#include <benchmark/benchmark.h>

#include "voltpomdp/bac.hpp"
#include "voltpomdp/discretization.hpp"

using namespace voltpomdp;

namespace {

StateKernelConfig wscc_kernel() {
    Discretization d;
    d.monitored_buses = {5, 6, 8};
    return StateKernelConfig::from_discretization(d);
}

// Episodes over random 3-bus voltages with 20 RBF centers per bus and 125 actions.
std::vector<BacEpisode> random_episodes(std::size_t n_episodes, std::size_t length, Rng& rng) {
    const auto kernel = wscc_kernel();
    std::uniform_real_distribution<double> v(0.9, 1.1);
    const std::size_t n_actions = 125;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kernel.n_features() * n_actions));
    std::vector<BacEpisode> eps(n_episodes);
    for (auto& ep : eps) {
        for (std::size_t t = 0; t < length; ++t) {
            const std::vector<double> volts{v(rng), v(rng), v(rng)};
            SaPoint z;
            z.phi = rbf_features(volts, kernel);
            z.action = sample_action(policy_probs(z.phi, theta, n_actions), rng);
            z.score = step_score(z.phi, z.action, theta, n_actions);
            ep.points.push_back(std::move(z));
            ep.rewards.push_back(t + 1 == length ? 50.0 : -50.0);
        }
    }
    return eps;
}

}  // namespace

static void BM_BacGradient(benchmark::State& state) {
    auto rng = make_rng(8);
    const auto eps = random_episodes(static_cast<std::size_t>(state.range(0)), 10, rng);
    for (auto _ : state) benchmark::DoNotOptimize(bac_gradient(eps, 125, GptdConfig{}));
}
BENCHMARK(BM_BacGradient)->Arg(10)->Arg(40)->Unit(benchmark::kMillisecond);

static void BM_PolicyProbs(benchmark::State& state) {
    const auto kernel = wscc_kernel();
    const auto phi = rbf_features(std::vector<double>{0.97, 1.0, 1.03}, kernel);
    const Eigen::VectorXd theta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(kernel.n_features() * 125), 0.01);
    for (auto _ : state) benchmark::DoNotOptimize(policy_probs(phi, theta, 125));
}
BENCHMARK(BM_PolicyProbs);

BENCHMARK_MAIN();
