#include <benchmark/benchmark.h>

#include "voltpomdp/environment.hpp"

using namespace voltpomdp;

static void BM_EnvStep(benchmark::State& state, const char* name) {
    EnvConfig cfg;
    cfg.case_file = std::string(VOLTPOMDP_CASES_DIR) + "/" + name + ".json";
    cfg.terminate_on_goal = false;
    auto env = VoltageControlEnv::from_config(cfg);
    env.reset(1);
    auto rng = make_rng(9);
    std::uniform_int_distribution<std::size_t> act(0, env.n_actions() - 1);
    for (auto _ : state) {
        if (env.done()) env.reset();
        benchmark::DoNotOptimize(env.step(act(rng)));
    }
}
BENCHMARK_CAPTURE(BM_EnvStep, wscc9, "wscc9");
BENCHMARK_CAPTURE(BM_EnvStep, ieee14, "ieee14");

BENCHMARK_MAIN();
