// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "slim/kernels.hpp"

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

using Gemm = void (*)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t,
                      std::size_t, std::size_t);

// Square problems of side state.range(0).
void run_gemm(benchmark::State& state, Gemm gemm) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1);
  const auto b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    gemm(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_GemmNN_Serial(benchmark::State& s) { run_gemm(s, slim::serial::gemm_nn); }
void BM_GemmNN_OpenMP(benchmark::State& s) { run_gemm(s, slim::kernels::gemm_nn); }
void BM_GemmNT_Serial(benchmark::State& s) { run_gemm(s, slim::serial::gemm_nt); }
void BM_GemmNT_OpenMP(benchmark::State& s) { run_gemm(s, slim::kernels::gemm_nt); }
void BM_GemmTN_Serial(benchmark::State& s) { run_gemm(s, slim::serial::gemm_tn); }
void BM_GemmTN_OpenMP(benchmark::State& s) { run_gemm(s, slim::kernels::gemm_tn); }

BENCHMARK(BM_GemmNN_Serial)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNN_OpenMP)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT_Serial)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT_OpenMP)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmTN_Serial)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmTN_OpenMP)->Arg(64)->Arg(256);

using Means = void (*)(std::span<const double>, std::size_t, std::size_t, std::span<double>);
using Vars = void (*)(std::span<const double>, std::size_t, std::size_t, std::span<const double>, std::size_t,
                      std::span<double>);

// Mean and variance along one axis of a (rows × 768) matrix, the SNR workload.
void run_moments(benchmark::State& state, Means means, Vars vars, bool along_rows) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 768;
  const auto x = random_values(rows * cols, 3);
  std::vector<double> mu(along_rows ? rows : cols), var(mu.size());
  for (auto _ : state) {
    means(x, rows, cols, mu);
    vars(x, rows, cols, mu, 0, var);
    benchmark::DoNotOptimize(var.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

void BM_RowMoments_Serial(benchmark::State& s) { run_moments(s, slim::serial::row_means, slim::serial::row_vars, true); }
void BM_RowMoments_OpenMP(benchmark::State& s) {
  run_moments(s, slim::kernels::row_means, slim::kernels::row_vars, true);
}
void BM_ColMoments_Serial(benchmark::State& s) {
  run_moments(s, slim::serial::col_means, slim::serial::col_vars, false);
}
void BM_ColMoments_OpenMP(benchmark::State& s) {
  run_moments(s, slim::kernels::col_means, slim::kernels::col_vars, false);
}

BENCHMARK(BM_RowMoments_Serial)->Arg(768)->Arg(3072);
BENCHMARK(BM_RowMoments_OpenMP)->Arg(768)->Arg(3072);
BENCHMARK(BM_ColMoments_Serial)->Arg(768)->Arg(3072);
BENCHMARK(BM_ColMoments_OpenMP)->Arg(768)->Arg(3072);

}  // namespace

BENCHMARK_MAIN();
