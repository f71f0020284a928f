#include "rankguard/stats.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

void bm_percentile_rank(benchmark::State& state) {
    const auto v = random_vector(static_cast<std::size_t>(state.range(0)), 11);
    for (auto _ : state) {
        benchmark::DoNotOptimize(rankguard::stats::percentile_rank(v));
    }
}

void bm_spearman(benchmark::State& state) {
    const auto x = random_vector(static_cast<std::size_t>(state.range(0)), 12);
    const auto y = random_vector(static_cast<std::size_t>(state.range(0)), 13);
    for (auto _ : state) {
        benchmark::DoNotOptimize(rankguard::stats::spearman(x, y));
    }
}

void bm_ewma(benchmark::State& state) {
    const auto x = random_vector(static_cast<std::size_t>(state.range(0)), 14);
    for (auto _ : state) {
        benchmark::DoNotOptimize(rankguard::stats::ewma(x, 30.0, 20));
    }
}

} // namespace

BENCHMARK(bm_percentile_rank)->Arg(100)->Arg(1000)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_spearman)->Arg(100)->Arg(1000)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_ewma)->Arg(1000)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
