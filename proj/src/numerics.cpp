#include "lprobe/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lprobe/kernels.hpp"

namespace lprobe {

Matrix linear_forward(const Matrix& x, const Matrix& w, std::span<const double> b) {
    if (x.cols() != w.rows())
        throw ShapeError("linear_forward: x is " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()) + " but W has " + std::to_string(w.rows()) +
                         " rows");
    if (b.size() != w.cols()) throw ShapeError("linear_forward: bias length != W cols");
    Matrix y(x.rows(), w.cols());
    kernels::parallel::gemm_nn_bias(x.values(), w.values(), b, y.values(), x.rows(), x.cols(),
                                    w.cols());
    return y;
}

LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy) {
    if (x.cols() != w.rows() || dy.rows() != x.rows() || dy.cols() != w.cols())
        throw ShapeError("linear_backward: shapes inconsistent with forward");
    const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
    LinearGrads g{Matrix(n, k), Matrix(k, m), std::vector<double>(m)};
    kernels::parallel::gemm_nt(dy.values(), w.values(), g.dx.values(), n, k, m);
    kernels::parallel::gemm_tn(x.values(), dy.values(), g.dw.values(), n, k, m);
    kernels::parallel::column_sum(dy.values(), g.db, n, m);
    return g;
}

Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
    if (!x.same_shape(dy)) throw ShapeError("relu_backward: shape mismatch");
    Matrix dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) dx.data()[i] = x.data()[i] > 0.0 ? dy.data()[i] : 0.0;
    return dx;
}

DropoutResult dropout(const Matrix& x, double p, Mode mode, RngStream& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    DropoutResult r{x, Matrix(x.rows(), x.cols(), 1.0)};
    if (mode == Mode::eval || p == 0.0) return r;
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (rng.uniform() < p) {
            r.mask.data()[i] = 0.0;
            r.y.data()[i] = 0.0;
        } else {
            r.y.data()[i] = x.data()[i] * scale;
        }
    }
    return r;
}

Matrix dropout_backward(const Matrix& dy, const Matrix& mask, double p) {
    if (!dy.same_shape(mask)) throw ShapeError("dropout_backward: shape mismatch");
    Matrix dx(dy.rows(), dy.cols());
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < dy.size(); ++i)
        dx.data()[i] = mask.data()[i] != 0.0 ? dy.data()[i] * scale : 0.0;
    return dx;
}

std::vector<double> mean_pool_time(const Matrix& frames) {
    if (frames.rows() == 0) throw ShapeError("mean_pool_time: no frames");
    std::vector<double> out(frames.cols(), 0.0);
    for (std::size_t t = 0; t < frames.rows(); ++t) {
        const auto r = frames.row(t);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
    }
    const double inv = 1.0 / static_cast<double>(frames.rows());
    for (auto& v : out) v *= inv;
    return out;
}

std::vector<double> mean_pool_time(std::span<const float> frames, std::size_t n_frames,
                                   std::size_t dim) {
    if (n_frames == 0) throw ShapeError("mean_pool_time: no frames");
    if (frames.size() != n_frames * dim) throw ShapeError("mean_pool_time: size mismatch");
    std::vector<double> out(dim);
    kernels::parallel::mean_rows(frames, out, n_frames, dim);
    return out;
}

std::vector<double> softmax(std::span<const double> z) {
    std::vector<double> w(z.size());
    if (z.empty()) return w;
    const double mx = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        w[i] = std::exp(z[i] - mx);
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

BceResult sigmoid_bce_with_logits(const Matrix& logits, const Matrix& targets) {
    if (!logits.same_shape(targets)) throw ShapeError("bce: logits/targets shape mismatch");
    if (logits.empty()) throw ShapeError("bce: empty batch");
    const double inv_count = 1.0 / static_cast<double>(logits.size());
    BceResult r{0.0, Matrix(logits.rows(), logits.cols())};
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double l = logits.data()[i];
        const double y = targets.data()[i];
        if (y != 0.0 && y != 1.0)
            throw std::invalid_argument("bce: non-binary target " + std::to_string(y));
        total += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
        r.dlogits.data()[i] = (sigmoid(l) - y) * inv_count;
    }
    r.loss = total * inv_count;
    return r;
}

double grad_check(const ScalarFn& f, std::span<const double> analytic,
                  std::span<const double> theta, double h) {
    if (analytic.size() != theta.size()) throw ShapeError("grad_check: gradient length mismatch");
    std::vector<double> probe(theta.begin(), theta.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

bool all_finite(std::span<const double> v) noexcept {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace lprobe
