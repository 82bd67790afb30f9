#pragma once

// Planted-layer synthetic datasets and a closed-form separability oracle.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "lprobe/embedding_store.hpp"

namespace lprobe {

struct PlantedFeature {
    std::size_t planted_layer = 0;
    double effect_size = 2.0;
    double positive_rate = 0.5;
};

struct PlantSpec {
    std::size_t train_speakers = 300;
    std::size_t val_speakers = 50;
    std::size_t test_speakers = 75;
    std::size_t ood_speakers = 0;
    std::size_t recordings_per_speaker = 2;
    std::size_t dim = 64;
    std::size_t min_frames = 8;
    std::size_t max_frames = 24;
    std::size_t n_layers = 13;
    std::array<PlantedFeature, kNumFeatures> features{{
        {2, 2.0, 0.25},
        {3, 2.0, 0.50},
        {5, 2.0, 0.22},
        {8, 2.0, 0.58},
        {11, 2.0, 0.59},
    }};
    double leak = 0.25;
    double noise_sigma = 1.0;
    std::uint64_t seed = 4200;
};

/// Throws ConfigError. Rapid and slow rate are drawn exclusively, so their
/// positive rates must sum below 1.
void validate(const PlantSpec& spec);
nlohmann::ordered_json to_json(const PlantSpec& spec);
PlantSpec plant_spec_from_json(const nlohmann::ordered_json& j);

struct SynthRecord {
    ManifestEntry entry;
    LayerStackRecord record;
};

/// Every recording in split order (train, val, test, ood_test). Deterministic
/// given the PlantSpec.
std::vector<SynthRecord> synthesize(const PlantSpec& spec);

/// Writes `out_dir/embeddings/<id>.lps` and `out_dir/manifest.json`.
DatasetManifest generate(const PlantSpec& spec, const std::filesystem::path& out_dir);

/// Unit-norm planted direction of each feature.
std::vector<std::vector<double>> plant_directions(const PlantSpec& spec);

struct OracleRanking {
    std::vector<double> scores; // one Fisher ratio per layer
    std::size_t argmax = 0;
};

/// Per layer: time-pool each recording of `split`, project onto the normalized
/// class-mean difference, and score gap² over pooled within-class variance.
/// Throws UndefinedMetricError when the feature has a single class.
OracleRanking oracle_rank(const DatasetManifest& manifest, std::size_t feature,
                          Split split = Split::train);

} // namespace lprobe
