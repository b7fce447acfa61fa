// Serial vs OpenMP kernels: one Bellman sweep over the grid, and bootstrap
// standard errors. Run with --benchmark_filter to select a family.

#include "dynmatch/dynamics.hpp"
#include "dynmatch/estimation.hpp"
#include "dynmatch/model_io.hpp"

#include <benchmark/benchmark.h>

#include <omp.h>

#include <map>
#include <random>

using namespace dynmatch;

namespace {

// A value field a few sweeps from zero, so warm starts and continuation
// gradients are representative of a solve in progress.
struct SweepFixture {
  ModelSpec spec;
  SimplexGrid grid;
  Vec W;

  SweepFixture(const ModelSpec& s, int res) : spec(s), grid(spec, res) {
    VfiOptions o;
    o.max_sweeps = 3;
    o.anderson_window = 0;
    o.coarse_factor = 0.0;
    W = vfi_solve(spec, grid, o, nullptr, true).W.values;
  }
};

const SweepFixture& logit_fixture(int res) {
  static std::map<int, SweepFixture> cache;
  auto it = cache.find(res);
  if (it == cache.end()) it = cache.emplace(res, SweepFixture(two_type_example(ShockMode::Logit, 1.0), res)).first;
  return it->second;
}

void sweep(benchmark::State& state, bool parallel) {
  const SweepFixture& f = logit_fixture(static_cast<int>(state.range(0)));
  const BellmanOperator op(f.spec, f.grid);
  Vec out(f.grid.size());
  for (auto _ : state) {
    std::vector<NodeWarm> warm(f.grid.size());
    if (parallel) bellman_sweep_parallel(op, f.W, out, warm);
    else bellman_sweep_serial(op, f.W, out, warm);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["nodes"] = f.grid.size();
  state.counters["threads"] = parallel ? omp_get_max_threads() : 1;
}

void BM_SweepSerial(benchmark::State& state) { sweep(state, false); }
void BM_SweepParallel(benchmark::State& state) { sweep(state, true); }
BENCHMARK(BM_SweepSerial)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepParallel)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

struct BootstrapFixture {
  ModelSpec base;
  SurplusBasis basis;
  EstimationDataset data;

  explicit BootstrapFixture(int size) : base(random_spec(size, size, 11)) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int l = 0; l < 2; ++l) {
      Mat phi = Mat::Zero(size + 1, size + 1);
      for (int x = 1; x <= size; ++x)
        for (int y = 1; y <= size; ++y) phi(x, y) = u(rng);
      basis.phi.push_back(phi);
      basis.names.push_back("f" + std::to_string(l + 1));
    }
    basis.lambda = Vec::Constant(2, 0.5);
    data = synth_data(basis.apply(base, basis.lambda), 100000, 13);
  }
};

void bootstrap(benchmark::State& state, bool parallel) {
  static const BootstrapFixture f(5);
  BootstrapOptions o;
  o.replicates = static_cast<int>(state.range(0));
  o.seed = 14;
  o.method = Estimator::Mpec;
  o.parallel = parallel;
  for (auto _ : state) {
    const BootstrapResult r = bootstrap_se(f.base, f.basis, f.data, o);
    benchmark::DoNotOptimize(r.se.data());
  }
  state.counters["threads"] = parallel ? omp_get_max_threads() : 1;
}

void BM_BootstrapSerial(benchmark::State& state) { bootstrap(state, false); }
void BM_BootstrapParallel(benchmark::State& state) { bootstrap(state, true); }
BENCHMARK(BM_BootstrapSerial)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapParallel)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
