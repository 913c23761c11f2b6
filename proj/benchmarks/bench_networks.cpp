#include <benchmark/benchmark.h>

#include "voltpomdp/dqn.hpp"

using namespace voltpomdp;

namespace {

Batch random_batch(const Mlp& net, std::size_t n, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> act(0, net.output_size() - 1);
    std::vector<Transition> ts;
    for (std::size_t i = 0; i < n; ++i) {
        Transition t;
        t.state = Eigen::VectorXd::NullaryExpr(net.input_size(), [&] { return g(rng); });
        t.next_state = Eigen::VectorXd::NullaryExpr(net.input_size(), [&] { return g(rng); });
        t.action = act(rng);
        t.reward = 50.0;
        ts.push_back(std::move(t));
    }
    return Batch::from(ts);
}

}  // namespace

static void BM_MlpGradient(benchmark::State& state) {
    const int hidden = static_cast<int>(state.range(0));
    const Mlp net({3, hidden, hidden, 125});
    auto rng = make_rng(4);
    const auto params = net.init_params(rng);
    const auto batch = random_batch(net, 32, rng);
    const Eigen::VectorXd targets = Eigen::VectorXd::Constant(32, 10.0);
    Eigen::VectorXd grad;
    for (auto _ : state) benchmark::DoNotOptimize(net.mse_gradient(params, batch.states, batch.actions, targets, grad));
}
BENCHMARK(BM_MlpGradient)->Arg(16)->Arg(64);

static void BM_MlpForwardBatch(benchmark::State& state) {
    const int hidden = static_cast<int>(state.range(0));
    const Mlp net({3, hidden, hidden, 125});
    auto rng = make_rng(5);
    const auto params = net.init_params(rng);
    const auto batch = random_batch(net, 32, rng);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward_batch(params, batch.states));
}
BENCHMARK(BM_MlpForwardBatch)->Arg(16)->Arg(64);

static void BM_MhStep(benchmark::State& state) {
    const int hidden = static_cast<int>(state.range(0));
    const Mlp net({3, hidden, hidden, 125});
    auto rng = make_rng(6);
    const auto w0 = net.init_params(rng);
    const auto batch = random_batch(net, 32, rng);
    const auto targets = td_targets(net, batch, w0, w0, 0.99);
    const MhOptions opts;
    auto chain = start_chain(net, w0, batch, targets, opts);
    Eigen::VectorXd theta = w0, target = w0;
    for (auto _ : state) benchmark::DoNotOptimize(mh_step(net, chain, theta, target, batch, targets, opts, rng));
}
BENCHMARK(BM_MhStep)->Arg(16)->Arg(64);

static void BM_DqnUpdate(benchmark::State& state) {
    const Mlp net({3, 64, 64, 125});
    auto rng = make_rng(7);
    auto theta = net.init_params(rng);
    auto target = theta;
    const auto batch = random_batch(net, 32, rng);
    for (auto _ : state) benchmark::DoNotOptimize(dqn_update(net, batch, theta, target, 1e-4, 0.01, 0.99));
}
BENCHMARK(BM_DqnUpdate);

BENCHMARK_MAIN();
