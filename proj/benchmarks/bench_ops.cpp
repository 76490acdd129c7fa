#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "clinembed/autodiff.hpp"
#include "clinembed/metrics.hpp"
#include "clinembed/tsne.hpp"

namespace {

using namespace clinembed;

Tensor gaussian(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

void BM_MatMulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = gaussian({n, n}, 1);
  const Tensor b = gaussian({n, n}, 2);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value().data());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_MatMulForward)->RangeMultiplier(2)->Range(16, 256);

void BM_MatMulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = gaussian({n, n}, 1);
  const Tensor b = gaussian({n, n}, 2);
  for (auto _ : state) {
    Tape tape;
    const Var x = tape.leaf(a, true);
    const Var y = tape.leaf(b, true);
    benchmark::DoNotOptimize(backward(tape, sum_all(matmul(x, y))));
  }
}
BENCHMARK(BM_MatMulBackward)->RangeMultiplier(2)->Range(16, 256);

void BM_GeluForwardBackward(benchmark::State& state) {
  const Tensor a = gaussian({static_cast<std::size_t>(state.range(0))}, 3);
  for (auto _ : state) {
    Tape tape;
    const Var x = tape.leaf(a, true);
    benchmark::DoNotOptimize(backward(tape, sum_all(gelu(x))));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeluForwardBackward)->Arg(1 << 12)->Arg(1 << 16);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = unit(rng) < 0.1 ? 1 : 0;
    scores[i] = unit(rng) + 0.3 * labels[i];
  }
  labels[0] = 1;
  labels[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(auroc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(10)->Range(100, 100000);

void BM_Auprc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = unit(rng) < 0.1 ? 1 : 0;
    scores[i] = unit(rng) + 0.3 * labels[i];
  }
  labels[0] = 1;
  labels[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(auprc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auprc)->RangeMultiplier(10)->Range(100, 100000);

void BM_Tsne(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor points = gaussian({n, 16}, 6);
  TsneConfig config;
  config.perplexity = 10.0;
  config.iterations = 500;
  for (auto _ : state) benchmark::DoNotOptimize(tsne(points, config).coords.data());
}
BENCHMARK(BM_Tsne)->Arg(24)->Arg(54)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
