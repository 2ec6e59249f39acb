// Serial vs OpenMP timings for the batch runner and the dispatch grid search.

#include "dcmg/batch.hpp"
#include "dcmg/scenario_io.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <string>

using namespace dcmg;

namespace {

const ScenarioBundle& bundle() {
    static const ScenarioBundle b = parse_scenario(std::string(DCMG_SCENARIO_DIR) + "/table1_fig4.json");
    return b;
}

std::vector<BatchJob> make_jobs(int n) {
    const ScenarioBundle& b = bundle();
    ControllerConfig cfg = b.cfg;
    cfg.enabled = true;
    std::mt19937 rng(1);
    std::normal_distribution<double> nd;
    std::vector<BatchJob> jobs;
    for (int k = 0; k < n; ++k) {
        Scenario sc = b.scenario;
        sc.events.clear();
        sc.integrator.method = IntegratorKind::Trapezoidal;
        sc.integrator.step = 1e-3;
        sc.integrator.t_end = 2.0;
        sc.integrator.record_interval = 0.1;
        SystemState init = initial_state(b.spec, cfg, sc);
        for (auto& q : init.phys.q_bus) q *= 1.0 + 0.05 * nd(rng);
        jobs.push_back({sc, init});
    }
    return jobs;
}

std::vector<GeneratorSpec> three_units() {
    const auto& g = bundle().spec.gens;
    return {g[0], g[1], g[2]};
}

void BM_BatchSerial(benchmark::State& state) {
    ControllerConfig cfg = bundle().cfg;
    cfg.enabled = true;
    const auto jobs = make_jobs(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(run_batch_serial(bundle().spec, cfg, jobs));
}

void BM_BatchParallel(benchmark::State& state) {
    ControllerConfig cfg = bundle().cfg;
    cfg.enabled = true;
    const auto jobs = make_jobs(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(run_batch(bundle().spec, cfg, jobs));
}

void BM_GridSearchSerial(benchmark::State& state) {
    const auto gens = three_units();
    GridSearchOptions opts;
    opts.points = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(grid_search_dispatch_serial(gens, 20.0, opts));
}

void BM_GridSearchParallel(benchmark::State& state) {
    const auto gens = three_units();
    GridSearchOptions opts;
    opts.points = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(grid_search_dispatch(gens, 20.0, opts));
}

}  // namespace

BENCHMARK(BM_BatchSerial)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchParallel)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearchSerial)->Arg(201)->Arg(801)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearchParallel)->Arg(201)->Arg(801)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
