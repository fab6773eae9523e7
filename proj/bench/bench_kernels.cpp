// Serial reference kernels against their OpenMP counterparts.
// Thread count follows NF_THREADS (unset or 0 runs single-threaded).

#include <benchmark/benchmark.h>

#include "nfa/flow/model.hpp"
#include "nfa/kernels.hpp"
#include "nfa/parallel.hpp"
#include "nfa/prng.hpp"

namespace {

nfa::Matrix<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  nfa::Prng prng(seed);
  return prng.standard_normal<float>({rows, cols});
}

void BM_MatmulSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nfa::kernels::serial::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1);
  const auto b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nfa::kernels::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulNtSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 3);
  const auto b = random_matrix(n, n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(nfa::kernels::serial::matmul_nt(a, b));
}

void BM_MatmulNtParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 3);
  const auto b = random_matrix(n, n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(nfa::kernels::matmul_nt(a, b));
}

void BM_SumSerial(benchmark::State& state) {
  const auto a = random_matrix(static_cast<std::size_t>(state.range(0)), 1, 5);
  for (auto _ : state) benchmark::DoNotOptimize(nfa::kernels::serial::sum(a));
}

void BM_SumParallel(benchmark::State& state) {
  const auto a = random_matrix(static_cast<std::size_t>(state.range(0)), 1, 5);
  for (auto _ : state) benchmark::DoNotOptimize(nfa::kernels::sum(a));
}

void BM_FlowEncode(benchmark::State& state) {
  nfa::flow::FlowArchitecture arch;
  auto model = nfa::flow::build_flow<float>(arch);
  nfa::Prng prng(6);
  model.randomize(prng, 0.1);
  nfa::Matrix<float> x({static_cast<std::size_t>(state.range(0)), model.dim()});
  for (auto& v : x.values()) v = static_cast<float>(prng.uniform());
  for (auto _ : state) benchmark::DoNotOptimize(model.inverse(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_MatmulSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulNtSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulNtParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_SumSerial)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_SumParallel)->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_FlowEncode)->Arg(20)->Arg(64);

BENCHMARK_MAIN();
