#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "lprobe/embedding_store.hpp"
#include "lprobe/pooled_dataset.hpp"
#include "lprobe/probe_model.hpp"

namespace lprobe {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double dropout_p = 0.3;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::uint64_t seed = 4200;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

/// AdamW moment buffers, congruent to the parameters they track.
struct OptimizerState {
    ProbeParams m;
    ProbeParams v;
    std::uint64_t t = 0;

    static OptimizerState for_params(const ProbeParams& params);
    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One AdamW update with decoupled weight decay applied to every scalar:
///   θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ
/// Throws NonFiniteError on a non-finite gradient, ShapeError on mismatch.
void adamw_step(ProbeParams& params, const ProbeParams& grads, OptimizerState& state,
                const TrainConfig& config);

/// Flat-buffer form of the same update, shared by adamw_step.
void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t t, const TrainConfig& config);

/// Index batches for one epoch: a seeded shuffle keyed by epoch, then contiguous
/// batches with the final short batch kept.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n_examples, std::size_t batch_size,
                                                     std::size_t epoch, std::uint64_t seed);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::vector<std::optional<double>> val_balanced_accuracy; // canonical feature order
    std::vector<double> layer_weights;                        // empty for a fixed layer
    double seconds = 0.0;
};

nlohmann::ordered_json to_json(const EpochLog& log);
void write_epoch_logs(const std::filesystem::path& path, const std::vector<EpochLog>& logs);

struct TrainResult {
    ProbeParams params;
    std::vector<EpochLog> logs;
};

struct TrainHooks {
    /// Called after every optimizer step with the global step index.
    std::function<void(std::size_t step, const ProbeParams&)> on_step;
};

/// Deterministic given (data, arch, cfg). The architecture's dropout must match
/// the training config's.
TrainResult train(const PooledDataset& data, const ArchitectureConfig& arch, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Validates the manifest, pools every split, then trains.
TrainResult train(const DatasetManifest& manifest, const ArchitectureConfig& arch,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

} // namespace lprobe
