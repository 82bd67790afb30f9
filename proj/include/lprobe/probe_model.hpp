#pragma once

// Probing classifiers over a frozen encoder's per-layer representations.
//
// Topology, per example:
//   pooled [n_layers × dim]
//     -> layer selection: one fixed row, or Σ softmax(logits)_l · row_l
//     -> optional shared dense: linear + ReLU + dropout
//     -> single head: linear[d→h] + ReLU + dropout + projection[h→f]
//        multi head:  per feature, linear[d→h] + ReLU + dropout + projection[h→1]
//
// Parameter order (used by flatten(), the optimizer and the LPPM file):
//   layer_logits, shared.weight, shared.bias,
//   then per head: hidden.weight, hidden.bias, projection.weight, projection.bias.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lprobe/embedding_store.hpp"
#include "lprobe/matrix.hpp"
#include "lprobe/numerics.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

enum class HeadMode { single, multi };

struct LayerMode {
    enum class Kind { fixed, weighted_sum };
    Kind kind = Kind::fixed;
    std::size_t index = 0;

    static LayerMode fixed(std::size_t layer) { return {Kind::fixed, layer}; }
    static LayerMode weighted_sum() { return {Kind::weighted_sum, 0}; }
    bool is_weighted_sum() const noexcept { return kind == Kind::weighted_sum; }

    /// "0".."12" or "weighted_sum".
    std::string label() const;
    static std::optional<LayerMode> parse(std::string_view s);

    friend bool operator==(const LayerMode& a, const LayerMode& b) noexcept {
        return a.kind == b.kind && (a.kind == Kind::weighted_sum || a.index == b.index);
    }
    friend bool operator<(const LayerMode& a, const LayerMode& b) noexcept {
        if (a.kind != b.kind) return a.kind == Kind::fixed;
        return a.kind == Kind::fixed && a.index < b.index;
    }
};

struct ArchitectureConfig {
    HeadMode head_mode = HeadMode::single;
    bool shared_dense = false;
    std::optional<std::size_t> shared_dense_bottleneck; // none => width = input_dim
    std::optional<std::size_t> classifier_bottleneck;   // none => hidden width = input_dim
    LayerMode layer_mode = LayerMode::fixed(0);
    std::size_t n_layers = 13;
    std::size_t input_dim = 768;
    std::size_t n_features = kNumFeatures;
    double dropout_p = 0.3;

    std::size_t shared_width() const noexcept {
        return shared_dense_bottleneck.value_or(input_dim);
    }
    std::size_t head_input_width() const noexcept {
        return shared_dense ? shared_width() : input_dim;
    }
    std::size_t hidden_width() const noexcept { return classifier_bottleneck.value_or(input_dim); }
    std::size_t n_heads() const noexcept { return head_mode == HeadMode::single ? 1 : n_features; }

    friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

/// Throws ConfigError on a broken invariant.
void validate(const ArchitectureConfig& config);

/// Canonical form: a bottleneck equal to its default width becomes none, and the
/// shared bottleneck is dropped when there is no shared layer. Two configs that
/// build identical models normalize to the same value.
ArchitectureConfig normalized(ArchitectureConfig config);

nlohmann::ordered_json to_json(const ArchitectureConfig& config);
/// Missing keys keep their defaults.
ArchitectureConfig architecture_from_json(const nlohmann::ordered_json& j);

struct DenseParams {
    Matrix weight; // [in × out]
    std::vector<double> bias;

    friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct HeadParams {
    DenseParams hidden;
    DenseParams projection;

    friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

struct ProbeParams {
    std::vector<double> layer_logits; // empty for a fixed layer
    std::optional<DenseParams> shared;
    std::vector<HeadParams> heads;

    std::size_t scalar_count() const noexcept;

    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        visit(*this, fn);
    }
    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        visit(*this, fn);
    }

    friend bool operator==(const ProbeParams&, const ProbeParams&) = default;

private:
    template <class Self, class Fn>
    static void visit(Self& self, Fn& fn) {
        if (!self.layer_logits.empty()) fn(std::span(self.layer_logits));
        if (self.shared) {
            fn(self.shared->weight.values());
            fn(std::span(self.shared->bias));
        }
        for (auto& h : self.heads) {
            fn(h.hidden.weight.values());
            fn(std::span(h.hidden.bias));
            fn(h.projection.weight.values());
            fn(std::span(h.projection.bias));
        }
    }
};

std::vector<double> flatten(const ProbeParams& params);
void unflatten(std::span<const double> flat, ProbeParams& params);
ProbeParams zeros_like(const ProbeParams& params);

/// Uniform(±1/√fan_in) weights, zero biases, zero layer logits.
ProbeParams build(const ArchitectureConfig& config, RngStream& rng);

/// Closed-form trainable scalar count.
std::size_t count_params(const ArchitectureConfig& config);

/// Time-pooled representation of one recording: row l = mean over frames of layer l.
struct PooledExample {
    std::string record_id;
    Matrix layers; // [n_layers × dim]
    FeatureLabelSet labels;
};

PooledExample pool_record(const LayerStackRecord& record, const FeatureLabelSet& labels);

/// Softmax of the layer logits; empty for a fixed layer.
std::vector<double> layer_weights(const ProbeParams& params, const ArchitectureConfig& config);

std::vector<double> combine_layers(const PooledExample& example, const ProbeParams& params,
                                   const ArchitectureConfig& config);

using Batch = std::span<const PooledExample* const>;

struct DenseTrace {
    Matrix input;
    Matrix pre;          // before ReLU
    DropoutResult out;   // after ReLU + dropout
};

struct ForwardTrace {
    std::size_t batch_size = 0;
    std::vector<double> layer_weights;
    Matrix combined;                 // [n × input_dim]
    std::optional<DenseTrace> shared;
    std::vector<DenseTrace> hidden;  // one per head
};

struct ForwardPass {
    Matrix logits; // [n × n_features]
    ForwardTrace trace;
};

/// Eval mode never touches `rng`.
ForwardPass forward(Batch batch, const ProbeParams& params, const ArchitectureConfig& config,
                    Mode mode, RngStream& rng);

/// Gradients of Σ dlogits ⊙ logits with respect to every trainable scalar.
ProbeParams backward(Batch batch, const ProbeParams& params, const ArchitectureConfig& config,
                     const Matrix& dlogits, const ForwardTrace& trace);

/// Targets [n × n_features] from the batch labels.
Matrix batch_targets(Batch batch, std::size_t n_features);

// LPPM file: "LPPM", u32 version, u32 config-json length, config json bytes,
// then every parameter scalar in flatten() order as float64, little-endian.
inline constexpr std::uint32_t kParamsVersion = 1;

std::vector<std::byte> encode_params(const ArchitectureConfig& config, const ProbeParams& params);
std::pair<ArchitectureConfig, ProbeParams> decode_params(std::span<const std::byte> bytes);
void save_params(const std::filesystem::path& path, const ArchitectureConfig& config,
                 const ProbeParams& params);
std::pair<ArchitectureConfig, ProbeParams> load_params(const std::filesystem::path& path);

} // namespace lprobe
