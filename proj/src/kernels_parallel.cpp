#include "lprobe/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace lprobe::kernels::parallel {

namespace {
using index_t = std::int64_t;

bool worth_forking(std::size_t work) { return work >= kParallelThreshold; }
} // namespace

// Threads own whole output rows.
void gemm_nn_bias(std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> out,
                  std::size_t n, std::size_t k, std::size_t m) {
    const index_t rows = static_cast<index_t>(n);
#pragma omp parallel for schedule(static) if (worth_forking(n * k * m))
    for (index_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* o = out.data() + i * m;
        if (bias.empty())
            std::fill(o, o + m, 0.0);
        else
            std::copy(bias.begin(), bias.end(), o);
        const double* xi = x.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = xi[p];
            const double* wp = w.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += a * wp[j];
        }
    }
}

void gemm_nt(std::span<const double> dy, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
    const index_t rows = static_cast<index_t>(n);
#pragma omp parallel for schedule(static) if (worth_forking(n * k * m))
    for (index_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* g = dy.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double* wp = w.data() + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g[j] * wp[j];
            out[i * k + p] = acc;
        }
    }
}

// Threads own rows of the weight gradient; the batch index is walked in order.
void gemm_tn(std::span<const double> x, std::span<const double> dy, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
    const index_t rows = static_cast<index_t>(k);
#pragma omp parallel for schedule(static) if (worth_forking(n * k * m))
    for (index_t pp = 0; pp < rows; ++pp) {
        const auto p = static_cast<std::size_t>(pp);
        double* o = out.data() + p * m;
        std::fill(o, o + m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = x[i * k + p];
            const double* g = dy.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += a * g[j];
        }
    }
}

void column_sum(std::span<const double> a, std::span<double> out, std::size_t n, std::size_t m) {
    const index_t cols = static_cast<index_t>(m);
#pragma omp parallel for schedule(static) if (worth_forking(n * m))
    for (index_t jj = 0; jj < cols; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += a[i * m + j];
        out[j] = acc;
    }
}

void mean_rows(std::span<const float> a, std::span<double> out, std::size_t n, std::size_t d) {
    const index_t cols = static_cast<index_t>(d);
    const double inv = 1.0 / static_cast<double>(n);
#pragma omp parallel for schedule(static) if (worth_forking(n * d))
    for (index_t jj = 0; jj < cols; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i * d + j]);
        out[j] = acc * inv;
    }
}

} // namespace lprobe::kernels::parallel
