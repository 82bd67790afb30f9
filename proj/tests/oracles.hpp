#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "lprobe/matrix.hpp"
#include "lprobe/numerics.hpp"
#include "lprobe/pooled_dataset.hpp"
#include "lprobe/probe_model.hpp"
#include "lprobe/synthgen.hpp"

namespace oracle {

inline lprobe::Matrix naive_matmul(const lprobe::Matrix& a, const lprobe::Matrix& b) {
    lprobe::Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double s = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
            c(i, j) = static_cast<double>(s);
        }
    return c;
}

inline lprobe::Matrix transpose(const lprobe::Matrix& a) {
    lprobe::Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline lprobe::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen,
                                    double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    lprobe::Matrix m(r, c);
    for (auto& x : m.values()) x = u(gen);
    return m;
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
        worst = std::max(worst, std::abs(a[i] - b[i]) / d);
    }
    return worst;
}

inline double max_abs_err(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

struct Counts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Confusion counts by enumerating every (pred, label) pair type.
inline Counts brute_confusion(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& y) {
    Counts c;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (int pv = 0; pv < 2; ++pv)
            for (int yv = 0; yv < 2; ++yv) {
                if (p[i] != pv || y[i] != yv) continue;
                if (pv == 1 && yv == 1) ++c.tp;
                if (pv == 1 && yv == 0) ++c.fp;
                if (pv == 0 && yv == 0) ++c.tn;
                if (pv == 0 && yv == 1) ++c.fn;
            }
    return c;
}

/// Numerical total parameter count of a built model.
inline std::size_t realized_scalars(const lprobe::ProbeParams& p) {
    std::size_t n = 0;
    p.for_each_tensor([&](std::span<const double> t) { n += t.size(); });
    return n;
}

/// Independent extended-precision forward + mean BCE of the probe, reusing the
/// dropout masks from a library trace. Used as the numeric side of gradient
/// checks, where a double-precision loss would sit at the roundoff floor.
inline long double probe_loss_ld(lprobe::Batch batch, const lprobe::ProbeParams& p,
                                 const lprobe::ArchitectureConfig& c, const lprobe::ForwardTrace& masks) {
    using ld = long double;
    const std::size_t n = batch.size(), d = c.input_dim;
    std::vector<ld> w;
    if (c.layer_mode.is_weighted_sum()) {
        ld mx = p.layer_logits[0];
        for (double z : p.layer_logits) mx = std::max<ld>(mx, z);
        ld sum = 0;
        for (double z : p.layer_logits) {
            w.push_back(std::exp(static_cast<ld>(z) - mx));
            sum += w.back();
        }
        for (auto& x : w) x /= sum;
    }
    const ld keep = 1.0L / (1.0L - static_cast<ld>(c.dropout_p));
    auto dense_relu_drop = [&](const std::vector<std::vector<ld>>& in, const lprobe::DenseParams& layer,
                               const lprobe::Matrix& mask) {
        const std::size_t out_w = layer.bias.size();
        std::vector<std::vector<ld>> out(in.size(), std::vector<ld>(out_w));
        for (std::size_t i = 0; i < in.size(); ++i)
            for (std::size_t j = 0; j < out_w; ++j) {
                ld a = layer.bias[j];
                for (std::size_t k = 0; k < in[i].size(); ++k) a += in[i][k] * static_cast<ld>(layer.weight(k, j));
                a = a > 0 ? a : 0;
                out[i][j] = a * static_cast<ld>(mask(i, j)) * keep;
            }
        return out;
    };
    auto project = [&](const std::vector<std::vector<ld>>& in, const lprobe::DenseParams& layer) {
        std::vector<std::vector<ld>> out(in.size(), std::vector<ld>(layer.bias.size()));
        for (std::size_t i = 0; i < in.size(); ++i)
            for (std::size_t j = 0; j < layer.bias.size(); ++j) {
                ld a = layer.bias[j];
                for (std::size_t k = 0; k < in[i].size(); ++k) a += in[i][k] * static_cast<ld>(layer.weight(k, j));
                out[i][j] = a;
            }
        return out;
    };

    std::vector<std::vector<ld>> x(n, std::vector<ld>(d, 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            if (c.layer_mode.is_weighted_sum())
                for (std::size_t l = 0; l < c.n_layers; ++l) x[i][k] += w[l] * batch[i]->layers(l, k);
            else
                x[i][k] = batch[i]->layers(c.layer_mode.index, k);
        }
    if (c.shared_dense) x = dense_relu_drop(x, *p.shared, masks.shared->out.mask);

    std::vector<std::vector<ld>> logits(n, std::vector<ld>(c.n_features));
    for (std::size_t h = 0; h < p.heads.size(); ++h) {
        const auto z = project(dense_relu_drop(x, p.heads[h].hidden, masks.hidden[h].out.mask), p.heads[h].projection);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < z[i].size(); ++j) logits[i][h + j] = z[i][j];
    }
    ld loss = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < c.n_features; ++f) {
            const ld z = logits[i][f];
            const ld y = batch[i]->labels[f] ? 1 : 0;
            loss += std::max<ld>(z, 0) - z * y + std::log1p(std::exp(-std::abs(z)));
        }
    return loss / static_cast<ld>(n * c.n_features);
}

/// Max relative gradient error of the library backward for one toy batch,
/// numeric side from probe_loss_ld at step h.
inline double probe_grad_error(lprobe::Batch batch, const lprobe::ProbeParams& params,
                               const lprobe::ArchitectureConfig& c, const lprobe::RngStream& dropout_rng,
                               double h = 1e-5) {
    using namespace lprobe;
    RngStream r = dropout_rng;
    const auto fp = forward(batch, params, c, Mode::train, r);
    const auto bce = sigmoid_bce_with_logits(fp.logits, batch_targets(batch, c.n_features));
    const auto grads = backward(batch, params, c, bce.dlogits, fp.trace);
    const long double base = probe_loss_ld(batch, params, c, fp.trace);
    auto objective = [&](std::span<const double> theta) {
        ProbeParams p = params;
        unflatten(theta, p);
        return static_cast<double>(probe_loss_ld(batch, p, c, fp.trace) - base);
    };
    return grad_check(objective, flatten(grads), flatten(params), h);
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lprobe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Small planted spec for fast tests.
inline lprobe::PlantSpec small_spec(std::uint64_t seed = 7) {
    lprobe::PlantSpec s;
    s.train_speakers = 40;
    s.val_speakers = 10;
    s.test_speakers = 20;
    s.ood_speakers = 0;
    s.dim = 8;
    s.n_layers = 4;
    s.min_frames = 3;
    s.max_frames = 6;
    const std::size_t layers[] = {0, 1, 2, 3, 1};
    for (std::size_t f = 0; f < lprobe::kNumFeatures; ++f) s.features[f].planted_layer = layers[f];
    s.seed = seed;
    return s;
}

/// Pools synthesized records in memory, bypassing the file round trip.
inline lprobe::PooledDataset pooled_from(const std::vector<lprobe::SynthRecord>& recs) {
    using namespace lprobe;
    PooledDataset d;
    for (const auto& s : recs) {
        d.n_layers = s.record.n_layers;
        d.dim = s.record.dim;
        auto ex = pool_record(s.record, s.entry.labels);
        ex.record_id = s.entry.record_id;
        switch (s.entry.split) {
        case Split::train: d.train.push_back(std::move(ex)); break;
        case Split::val: d.val.push_back(std::move(ex)); break;
        case Split::test: d.test.push_back(std::move(ex)); break;
        case Split::ood_test: d.ood_test.push_back(std::move(ex)); break;
        }
    }
    return d;
}

} // namespace oracle
