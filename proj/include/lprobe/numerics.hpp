#pragma once

// Layer primitives with hand-written gradients, plus a central-difference
// gradient checker. All training math is 64-bit.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lprobe/matrix.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

enum class Mode { train, eval };

// y = xW + b, b broadcast over rows.
Matrix linear_forward(const Matrix& x, const Matrix& w, std::span<const double> b);

struct LinearGrads {
    Matrix dx;
    Matrix dw;
    std::vector<double> db;
};

// dx = dy·Wᵀ, dW = xᵀ·dy, db = column sums of dy.
LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy);

Matrix relu(const Matrix& x);
/// Subgradient at exactly zero is zero.
Matrix relu_backward(const Matrix& x, const Matrix& dy);

struct DropoutResult {
    Matrix y;
    Matrix mask; // 1 = kept, 0 = dropped
};

/// Inverted dropout: survivors are scaled by 1/(1-p) at train time, eval is the identity.
/// Throws ConfigError when p is outside [0, 1).
DropoutResult dropout(const Matrix& x, double p, Mode mode, RngStream& rng);
Matrix dropout_backward(const Matrix& dy, const Matrix& mask, double p);

/// Arithmetic mean over frames (rows).
std::vector<double> mean_pool_time(const Matrix& frames);
std::vector<double> mean_pool_time(std::span<const float> frames, std::size_t n_frames,
                                   std::size_t dim);

/// Max-shifted softmax.
std::vector<double> softmax(std::span<const double> z);

double sigmoid(double z) noexcept;

struct BceResult {
    double loss;
    Matrix dlogits;
};

/// Mean over all n×f elements of the logistic loss, in log-sum-exp form.
/// dlogits = (σ(ℓ) − y) / (n·f). Targets must be exactly 0 or 1.
BceResult sigmoid_bce_with_logits(const Matrix& logits, const Matrix& targets);

/// Scalar objective of a flat parameter vector.
using ScalarFn = std::function<double(std::span<const double>)>;

/// Max over coordinates of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8),
/// with numeric = (f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h.
double grad_check(const ScalarFn& f, std::span<const double> analytic,
                  std::span<const double> theta, double h = 1e-5);

bool all_finite(std::span<const double> v) noexcept;

} // namespace lprobe
