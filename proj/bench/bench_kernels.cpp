// Serial vs OpenMP kernels at probe shapes (batch 8, d 768) and the bootstrap.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "lprobe/evaluation.hpp"
#include "lprobe/kernels.hpp"

using namespace lprobe;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(gen);
    return v;
}

template <auto Kernel>
void BM_gemm_nn(benchmark::State& state) {
    const std::size_t n = state.range(0), k = state.range(1), m = state.range(2);
    const auto x = random_vec(n * k, 1), w = random_vec(k * m, 2), b = random_vec(m, 3);
    std::vector<double> out(n * m);
    for (auto _ : state) {
        Kernel(x, w, b, out, n, k, m);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * n * k * m);
}

template <auto Kernel>
void BM_gemm_tn(benchmark::State& state) {
    const std::size_t n = state.range(0), k = state.range(1), m = state.range(2);
    const auto x = random_vec(n * k, 1), dy = random_vec(n * m, 2);
    std::vector<double> out(k * m);
    for (auto _ : state) {
        Kernel(x, dy, out, n, k, m);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * n * k * m);
}

template <auto Kernel>
void BM_mean_rows(benchmark::State& state) {
    const std::size_t n = state.range(0), d = state.range(1);
    std::vector<float> a(n * d, 0.25f);
    std::vector<double> out(d);
    for (auto _ : state) {
        Kernel(a, out, n, d);
        benchmark::DoNotOptimize(out.data());
    }
}

template <Execution Exec>
void BM_bootstrap(benchmark::State& state) {
    const std::size_t n = state.range(0);
    PredictionSet set;
    set.probabilities = Matrix(n, 1);
    set.labels = Matrix(n, 1);
    std::mt19937_64 gen(4);
    for (std::size_t i = 0; i < n; ++i) {
        set.record_ids.push_back(std::to_string(i));
        set.probabilities(i, 0) = (gen() % 100) / 100.0;
        set.labels(i, 0) = gen() % 2;
    }
    const RngStream rng(1, StreamKind::bootstrap);
    for (auto _ : state) {
        auto s = bootstrap_samples(set, 0, Metric::balanced_accuracy, rng, 1000, Exec);
        benchmark::DoNotOptimize(s.values.data());
    }
}

} // namespace

BENCHMARK(BM_gemm_nn<kernels::serial::gemm_nn_bias>)->Name("gemm_nn/serial")->Args({8, 768, 768})->Args({256, 768, 768});
BENCHMARK(BM_gemm_nn<kernels::parallel::gemm_nn_bias>)->Name("gemm_nn/parallel")->Args({8, 768, 768})->Args({256, 768, 768});
BENCHMARK(BM_gemm_tn<kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Args({8, 768, 768});
BENCHMARK(BM_gemm_tn<kernels::parallel::gemm_tn>)->Name("gemm_tn/parallel")->Args({8, 768, 768});
BENCHMARK(BM_mean_rows<kernels::serial::mean_rows>)->Name("mean_rows/serial")->Args({500, 768});
BENCHMARK(BM_mean_rows<kernels::parallel::mean_rows>)->Name("mean_rows/parallel")->Args({500, 768});
BENCHMARK(BM_bootstrap<Execution::serial>)->Name("bootstrap/serial")->Arg(223);
BENCHMARK(BM_bootstrap<Execution::parallel>)->Name("bootstrap/parallel")->Arg(223);

BENCHMARK_MAIN();
