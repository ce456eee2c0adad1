// Serial reference vs OpenMP kernels on the same inputs.

#include <benchmark/benchmark.h>

#include <vector>

#include "fbridge/bridge.hpp"
#include "fbridge/paired.hpp"

using namespace fbridge;

namespace {

const BridgeKernel& kernel() {
  static const BridgeKernel k([] {
    ProcessConfig c;
    c.hurst = 0.3;
    c.num_ou = 5;
    return c;
  }());
  return k;
}

Execution mode(const benchmark::State& state) { return state.range(1) ? Execution::parallel : Execution::serial; }

void label(benchmark::State& state) { state.SetLabel(state.range(1) ? "openmp" : "serial"); }

void BM_PinnedEmBatch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::vector<double> x0(2 * n, 0.0), x1(2 * n, 1.0);
  EmOptions em;
  em.n_steps = 100;
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_pinned_em_batch(kernel(), x0, x1, 2, em, {}, 1, mode(state)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
  label(state);
}

void BM_PinnedMarginalBatch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::vector<double> x0(2 * n, 0.0), x1(2 * n, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_pinned_marginal_batch(kernel(), x0, x1, 2, 0.5, 1, mode(state)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
  label(state);
}

void BM_Generate(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  ProcessConfig pc;
  pc.hurst = 0.3;
  const Reference ref = Reference::fractional(pc);
  const TrainableModel m = init_model(ref, Conditioning::paired, 2, {64, 64, 64}, 0.999, 1, kTagPaired);
  const DenseMatrix x0 = DenseMatrix::Zero(2, n);
  SampleOptions so;
  so.n_steps = 50;
  const Predictor net = predictor_of(m.model);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate(ref, net, Conditioning::paired, LossMode::endpoint, x0, so, 1, 0, mode(state)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
  label(state);
}

}  // namespace

BENCHMARK(BM_PinnedEmBatch)->ArgsProduct({{256, 4096}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PinnedMarginalBatch)->ArgsProduct({{4096, 65536}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Generate)->ArgsProduct({{256, 2048}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
