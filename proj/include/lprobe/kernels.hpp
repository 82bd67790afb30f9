#pragma once

// Dense inner loops used by the probe layers and the evaluators.
//
// Every kernel exists twice: a serial reference and an OpenMP version. The
// OpenMP version partitions OUTPUT elements across threads and accumulates
// each element in exactly the same order as the serial loop, so both produce
// bit-identical results. Tests assert that; bench/ compares their speed.
//
// All buffers are row-major. Output buffers are overwritten.

#include <cstddef>
#include <span>

namespace lprobe::kernels {

/// Minimum multiply-add count before the OpenMP kernels fork threads.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

namespace serial {

/// out[n×m] = x[n×k] · w[k×m] + bias[m] (bias may be empty).
void gemm_nn_bias(std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> out,
                  std::size_t n, std::size_t k, std::size_t m);

/// out[n×k] = dy[n×m] · wᵀ where w is [k×m].
void gemm_nt(std::span<const double> dy, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);

/// out[k×m] = xᵀ · dy where x is [n×k], dy is [n×m].
void gemm_tn(std::span<const double> x, std::span<const double> dy, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);

/// out[m] = Σ_rows a[n×m].
void column_sum(std::span<const double> a, std::span<double> out, std::size_t n, std::size_t m);

/// out[d] = mean over n rows of a[n×d] stored as 32-bit floats.
void mean_rows(std::span<const float> a, std::span<double> out, std::size_t n, std::size_t d);

} // namespace serial

namespace parallel {

void gemm_nn_bias(std::span<const double> x, std::span<const double> w,
                  std::span<const double> bias, std::span<double> out,
                  std::size_t n, std::size_t k, std::size_t m);
void gemm_nt(std::span<const double> dy, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_tn(std::span<const double> x, std::span<const double> dy, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);
void column_sum(std::span<const double> a, std::span<double> out, std::size_t n, std::size_t m);
void mean_rows(std::span<const float> a, std::span<double> out, std::size_t n, std::size_t d);

} // namespace parallel

} // namespace lprobe::kernels
