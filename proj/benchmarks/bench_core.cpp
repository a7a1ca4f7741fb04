#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include <geomine/clustering.hpp>
#include <geomine/resolution.hpp>
#include <geomine/synth.hpp>
#include <geomine/transport.hpp>

using namespace geomine;

static void BM_Assign(benchmark::State& state) {
  SynthSpec s;
  s.n = static_cast<std::size_t>(state.range(0));
  s.seed = 1;
  const auto syn = generate(s);
  const auto model = fit(syn.corpus, 24, 3, 0);
  for (auto _ : state) benchmark::DoNotOptimize(assign(model, syn.corpus));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Assign)->Arg(6000)->Arg(24000)->Unit(benchmark::kMillisecond);

static void BM_KendallTau(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> a(static_cast<std::size_t>(state.range(0))), b(a.size());
  for (auto& x : a) x = g(rng);
  for (auto& x : b) x = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(kendall_tau(a, b));
}
BENCHMARK(BM_KendallTau)->Arg(16)->Arg(72)->Arg(256);

static void BM_W2Exact(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> pa(n * 8), pb(n * 8);
  for (auto& x : pa) x = g(rng);
  for (auto& x : pb) x = g(rng) + 0.5;
  const auto a = EmpiricalMeasure::uniform(8, pa);
  const auto b = EmpiricalMeasure::uniform(8, pb);
  for (auto _ : state) benchmark::DoNotOptimize(w2_exact(a, b));
}
BENCHMARK(BM_W2Exact)->Arg(100)->Arg(300)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
