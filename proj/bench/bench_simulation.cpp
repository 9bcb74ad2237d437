// Serial reference vs OpenMP replicate map for one simulation cell.
#include "tmlesi/simulation.hpp"

#include <benchmark/benchmark.h>

using namespace tmlesi::sim;

namespace {

SimConfig cell(benchmark::State& state) {
  SimConfig cfg;
  cfg.n = state.range(0);
  cfg.beta = 1.0;
  cfg.replicates = 64;
  return cfg;
}

const std::vector<Estimand> kEstimands{Estimand::DirectEffect, Estimand::OersOverall};

void BM_CellSerial(benchmark::State& state) {
  const SimConfig cfg = cell(state);
  for (auto _ : state) benchmark::DoNotOptimize(run_cells_serial(cfg, kEstimands));
  state.SetItemsProcessed(state.iterations() * cfg.replicates);
}

void BM_CellParallel(benchmark::State& state) {
  SimConfig cfg = cell(state);
  cfg.threads = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(run_cells(cfg, kEstimands));
  state.SetItemsProcessed(state.iterations() * cfg.replicates);
}

}  // namespace

BENCHMARK(BM_CellSerial)->Arg(50)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CellParallel)
    ->ArgsProduct({{50, 500, 5000}, {1, 2, 4}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

BENCHMARK_MAIN();
