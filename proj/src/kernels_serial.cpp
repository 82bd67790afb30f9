#include "lprobe/kernels.hpp"

#include <algorithm>

namespace lprobe::kernels::serial {

void gemm_nn_bias(std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> out,
                  std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
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
    for (std::size_t i = 0; i < n; ++i) {
        const double* g = dy.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double* wp = w.data() + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g[j] * wp[j];
            out[i * k + p] = acc;
        }
    }
}

void gemm_tn(std::span<const double> x, std::span<const double> dy, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        double* o = out.data() + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = x[i * k + p];
            const double* g = dy.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += a * g[j];
        }
    }
}

void column_sum(std::span<const double> a, std::span<double> out, std::size_t n, std::size_t m) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j] += a[i * m + j];
}

void mean_rows(std::span<const float> a, std::span<double> out, std::size_t n, std::size_t d) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += static_cast<double>(a[i * d + j]);
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= inv;
}

} // namespace lprobe::kernels::serial
