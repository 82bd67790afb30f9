#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "lprobe/embedding_store.hpp"
#include "lprobe/experiment.hpp"
#include "lprobe/probe_model.hpp"
#include "oracles.hpp"

namespace fixture {

/// Reference macro balanced accuracies, rows 0..12 then the weighted sum,
/// columns 1 sd, 1 no sd, 5 sd, 5 no sd.
inline constexpr std::array<std::array<double, 4>, 14> kLayerTable{{
    {0.67, 0.69, 0.66, 0.69},
    {0.70, 0.71, 0.68, 0.68},
    {0.69, 0.69, 0.68, 0.69},
    {0.69, 0.72, 0.71, 0.70},
    {0.69, 0.70, 0.70, 0.69},
    {0.69, 0.71, 0.68, 0.67},
    {0.68, 0.72, 0.68, 0.68},
    {0.67, 0.67, 0.66, 0.70},
    {0.66, 0.69, 0.65, 0.68},
    {0.67, 0.69, 0.67, 0.68},
    {0.66, 0.68, 0.65, 0.69},
    {0.62, 0.63, 0.65, 0.66},
    {0.60, 0.61, 0.60, 0.61},
    {0.68, 0.70, 0.69, 0.69},
}};

inline const std::array<lprobe::ArchCell, 4> kCells{{
    {lprobe::HeadMode::single, true},
    {lprobe::HeadMode::single, false},
    {lprobe::HeadMode::multi, true},
    {lprobe::HeadMode::multi, false},
}};

inline lprobe::LayerMode row_layer(std::size_t row) {
    return row < 13 ? lprobe::LayerMode::fixed(row) : lprobe::LayerMode::weighted_sum();
}

inline lprobe::TableData layer_table() {
    lprobe::TableData t;
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t r = 0; r < kLayerTable.size(); ++r) t[kCells[c]][row_layer(r)] = kLayerTable[r][c];
    return t;
}

/// One column as a macro-only LayerTable for analyze_layers.
inline lprobe::LayerTable macro_column(std::size_t column) {
    lprobe::LayerTable t;
    for (std::size_t r = 0; r < kLayerTable.size(); ++r)
        t[row_layer(r)][std::string(lprobe::kMacroFeature)] = lprobe::ScoreCell{kLayerTable[r][column], {}, {}};
    return t;
}

inline lprobe::ArchitectureConfig toy_config(lprobe::HeadMode head, bool shared, lprobe::LayerMode layer,
                                             std::size_t d = 16, std::size_t n_layers = 4) {
    lprobe::ArchitectureConfig c;
    c.head_mode = head;
    c.shared_dense = shared;
    c.layer_mode = layer;
    c.n_layers = n_layers;
    c.input_dim = d;
    c.n_features = 5;
    c.dropout_p = 0.3;
    return c;
}

inline std::vector<lprobe::PooledExample> toy_batch(std::size_t n, std::size_t n_layers, std::size_t d,
                                                    std::mt19937_64& gen) {
    std::vector<lprobe::PooledExample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].record_id = "r" + std::to_string(i);
        out[i].layers = oracle::random_matrix(n_layers, d, gen);
        for (std::size_t f = 0; f < lprobe::kNumFeatures; ++f) out[i].labels[f] = gen() % 2 == 0;
    }
    return out;
}

/// Parameters perturbed away from their init so every path carries signal.
inline lprobe::ProbeParams random_params(const lprobe::ArchitectureConfig& c, std::uint64_t seed) {
    lprobe::RngStream rng(seed, lprobe::StreamKind::init);
    auto p = lprobe::build(c, rng);
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& v : p.layer_logits) v = u(gen);
    p.for_each_tensor([&](std::span<double> t) {
        for (auto& v : t) v += 0.05 * u(gen);
    });
    return p;
}

/// Gradient check on a batch of three toy examples.
inline double max_grad_error(const lprobe::ArchitectureConfig& c, std::uint64_t seed) {
    std::mt19937_64 gen(seed * 7 + 1);
    const auto examples = toy_batch(3, c.n_layers, c.input_dim, gen);
    std::vector<const lprobe::PooledExample*> ptrs;
    for (const auto& e : examples) ptrs.push_back(&e);
    return oracle::probe_grad_error(ptrs, random_params(c, seed), c,
                                    lprobe::RngStream(seed, lprobe::StreamKind::dropout));
}

inline lprobe::LayerStackRecord random_record(std::mt19937_64& gen, std::uint32_t layers, std::uint32_t dim,
                                              std::uint32_t frames) {
    lprobe::LayerStackRecord r;
    r.n_layers = layers;
    r.dim = dim;
    r.n_frames = frames;
    std::normal_distribution<float> n(0.0f, 3.0f);
    r.data.resize(std::size_t{layers} * dim * frames);
    for (auto& x : r.data) x = n(gen);
    return r;
}

} // namespace fixture
