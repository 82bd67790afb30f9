#include "lprobe/synthgen.hpp"

#include <cmath>
#include <cstdio>

#include "lprobe/errors.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kRapid = static_cast<std::size_t>(Feature::rapid_rate);
constexpr std::size_t kSlow = static_cast<std::size_t>(Feature::slow_rate);

enum SynthKey : std::uint64_t { directions = 1, labels = 2, noise = 3 };

} // namespace

void validate(const PlantSpec& s) {
    if (s.train_speakers == 0) throw ConfigError("plant spec: train_speakers must be >= 1");
    if (s.recordings_per_speaker == 0)
        throw ConfigError("plant spec: recordings_per_speaker must be >= 1");
    if (s.dim == 0 || s.n_layers == 0) throw ConfigError("plant spec: dim and n_layers must be >= 1");
    if (s.min_frames == 0 || s.min_frames > s.max_frames)
        throw ConfigError("plant spec: need 1 <= min_frames <= max_frames");
    if (!(s.leak >= 0.0 && s.leak < 1.0)) throw ConfigError("plant spec: leak must lie in [0, 1)");
    if (!(s.noise_sigma > 0.0) || !std::isfinite(s.noise_sigma))
        throw ConfigError("plant spec: noise_sigma must be finite and > 0");
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        const auto& p = s.features[f];
        const std::string name(kFeatureNames[f]);
        if (p.planted_layer >= s.n_layers)
            throw ConfigError("plant spec: " + name + " planted_layer " +
                              std::to_string(p.planted_layer) + " out of range");
        if (!(p.positive_rate > 0.0 && p.positive_rate < 1.0))
            throw ConfigError("plant spec: " + name + " positive_rate must lie in (0, 1)");
        if (!(p.effect_size >= 0.0) || !std::isfinite(p.effect_size))
            throw ConfigError("plant spec: " + name + " effect_size must be finite and >= 0");
    }
    if (!(s.features[kRapid].positive_rate + s.features[kSlow].positive_rate < 1.0))
        throw ConfigError("plant spec: rapid_rate and slow_rate positive rates must sum below 1");
}

ojson to_json(const PlantSpec& s) {
    ojson features = ojson::object();
    for (std::size_t f = 0; f < kNumFeatures; ++f)
        features[std::string(kFeatureNames[f])] = {{"planted_layer", s.features[f].planted_layer},
                                                   {"effect_size", s.features[f].effect_size},
                                                   {"positive_rate", s.features[f].positive_rate}};
    return ojson{{"n_speakers",
                  {{"train", s.train_speakers},
                   {"val", s.val_speakers},
                   {"test", s.test_speakers},
                   {"ood_test", s.ood_speakers}}},
                 {"recordings_per_speaker", s.recordings_per_speaker},
                 {"dim", s.dim},
                 {"n_frames", {s.min_frames, s.max_frames}},
                 {"n_layers", s.n_layers},
                 {"features", features},
                 {"leak", s.leak},
                 {"noise_sigma", s.noise_sigma},
                 {"seed", s.seed}};
}

PlantSpec plant_spec_from_json(const ojson& j) {
    PlantSpec s;
    try {
        if (j.contains("n_speakers")) {
            const auto& n = j.at("n_speakers");
            s.train_speakers = n.value("train", s.train_speakers);
            s.val_speakers = n.value("val", s.val_speakers);
            s.test_speakers = n.value("test", s.test_speakers);
            s.ood_speakers = n.value("ood_test", s.ood_speakers);
        }
        s.recordings_per_speaker = j.value("recordings_per_speaker", s.recordings_per_speaker);
        s.dim = j.value("dim", s.dim);
        if (j.contains("n_frames")) {
            const auto& r = j.at("n_frames");
            s.min_frames = r.at(0).get<std::size_t>();
            s.max_frames = r.at(1).get<std::size_t>();
        }
        s.n_layers = j.value("n_layers", s.n_layers);
        if (j.contains("features")) {
            for (const auto& [name, v] : j.at("features").items()) {
                const auto f = parse_feature(name);
                if (!f) throw ConfigError("plant spec: unknown feature '" + name + "'");
                auto& p = s.features[*f];
                p.planted_layer = v.value("planted_layer", p.planted_layer);
                p.effect_size = v.value("effect_size", p.effect_size);
                p.positive_rate = v.value("positive_rate", p.positive_rate);
            }
        }
        s.leak = j.value("leak", s.leak);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("plant spec: ") + e.what());
    }
    return s;
}

std::vector<std::vector<double>> plant_directions(const PlantSpec& spec) {
    const RngStream base = RngStream(spec.seed, StreamKind::synth).derive(SynthKey::directions);
    std::vector<std::vector<double>> dirs;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        RngStream rng = base.derive(f);
        std::vector<double> u(spec.dim);
        double norm = 0.0;
        while (norm == 0.0) {
            norm = 0.0;
            for (auto& x : u) {
                x = rng.normal();
                norm += x * x;
            }
        }
        norm = std::sqrt(norm);
        for (auto& x : u) x /= norm;
        dirs.push_back(std::move(u));
    }
    return dirs;
}

std::vector<SynthRecord> synthesize(const PlantSpec& spec) {
    validate(spec);
    const auto dirs = plant_directions(spec);
    const RngStream root(spec.seed, StreamKind::synth);
    const RngStream label_base = root.derive(SynthKey::labels);
    const RngStream noise_base = root.derive(SynthKey::noise);

    const std::pair<Split, std::size_t> plan[] = {{Split::train, spec.train_speakers},
                                                  {Split::val, spec.val_speakers},
                                                  {Split::test, spec.test_speakers},
                                                  {Split::ood_test, spec.ood_speakers}};
    const double p_slow = spec.features[kSlow].positive_rate;
    const double p_rapid_given_not_slow = spec.features[kRapid].positive_rate / (1.0 - p_slow);

    std::vector<SynthRecord> out;
    std::uint64_t index = 0;
    for (const auto& [split, n_speakers] : plan) {
        for (std::size_t k = 0; k < n_speakers; ++k) {
            char speaker[64];
            std::snprintf(speaker, sizeof speaker, "%s_spk%04zu", std::string(to_string(split)).c_str(), k);
            for (std::size_t r = 0; r < spec.recordings_per_speaker; ++r, ++index) {
                SynthRecord s;
                s.entry.speaker_id = speaker;
                s.entry.record_id = std::string(speaker) + "_r" + std::to_string(r);
                s.entry.task = split == Split::ood_test ? Task::SMR : Task::AMR;
                s.entry.split = split;
                s.entry.file_path = "embeddings/" + s.entry.record_id + ".lps";

                RngStream lr = label_base.derive(index);
                auto& labels = s.entry.labels;
                for (std::size_t f = 0; f < kNumFeatures; ++f)
                    if (f != kRapid && f != kSlow) labels[f] = lr.bernoulli(spec.features[f].positive_rate);
                labels[kSlow] = lr.bernoulli(p_slow);
                const bool rapid_draw = lr.bernoulli(p_rapid_given_not_slow);
                labels[kRapid] = !labels[kSlow] && rapid_draw;
                const std::size_t n_frames =
                    spec.min_frames + lr.uniform_index(spec.max_frames - spec.min_frames + 1);

                // Per-layer mean shift summed over positive features.
                std::vector<double> shift(spec.n_layers * spec.dim, 0.0);
                for (std::size_t f = 0; f < kNumFeatures; ++f) {
                    if (!labels[f]) continue;
                    const auto& p = spec.features[f];
                    auto add = [&](std::size_t layer, double scale) {
                        for (std::size_t d = 0; d < spec.dim; ++d)
                            shift[layer * spec.dim + d] += scale * p.effect_size * dirs[f][d];
                    };
                    add(p.planted_layer, 1.0);
                    if (spec.leak > 0.0) {
                        if (p.planted_layer > 0) add(p.planted_layer - 1, spec.leak);
                        if (p.planted_layer + 1 < spec.n_layers) add(p.planted_layer + 1, spec.leak);
                    }
                }

                auto& rec = s.record;
                rec.record_id = s.entry.record_id;
                rec.speaker_id = s.entry.speaker_id;
                rec.task = s.entry.task;
                rec.n_layers = static_cast<std::uint32_t>(spec.n_layers);
                rec.dim = static_cast<std::uint32_t>(spec.dim);
                rec.n_frames = static_cast<std::uint32_t>(n_frames);
                rec.data.resize(spec.n_layers * n_frames * spec.dim);
                RngStream nr = noise_base.derive(index);
                std::size_t i = 0;
                for (std::size_t l = 0; l < spec.n_layers; ++l)
                    for (std::size_t t = 0; t < n_frames; ++t)
                        for (std::size_t d = 0; d < spec.dim; ++d, ++i)
                            rec.data[i] = static_cast<float>(spec.noise_sigma * nr.normal() +
                                                             shift[l * spec.dim + d]);
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

DatasetManifest generate(const PlantSpec& spec, const fs::path& out_dir) {
    auto records = synthesize(spec);
    fs::create_directories(out_dir / "embeddings");
    DatasetManifest m;
    m.base_dir = out_dir;
    for (auto& s : records) {
        write_record(s.record, out_dir / s.entry.file_path);
        m.records.push_back(std::move(s.entry));
    }
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

OracleRanking oracle_rank(const DatasetManifest& manifest, std::size_t feature, Split split) {
    if (feature >= kNumFeatures) throw std::out_of_range("oracle_rank: feature index out of range");

    // time-pooled vectors per layer, grouped by class
    std::vector<std::vector<std::vector<double>>> pooled[2];
    std::size_t n_layers = 0, dim = 0;
    for (const auto& item : iterate_split(manifest, split)) {
        const auto& rec = item.record;
        if (n_layers == 0) {
            n_layers = rec.n_layers;
            dim = rec.dim;
            pooled[0].resize(n_layers);
            pooled[1].resize(n_layers);
        }
        const int cls = item.labels[feature] ? 1 : 0;
        for (std::size_t l = 0; l < n_layers; ++l) {
            std::vector<double> v(dim, 0.0);
            const float* p = rec.data.data() + l * rec.n_frames * dim;
            for (std::size_t t = 0; t < rec.n_frames; ++t)
                for (std::size_t d = 0; d < dim; ++d) v[d] += p[t * dim + d];
            for (auto& x : v) x /= static_cast<double>(rec.n_frames);
            pooled[cls][l].push_back(std::move(v));
        }
    }
    if (n_layers == 0 || pooled[0][0].empty() || pooled[1][0].empty())
        throw UndefinedMetricError("oracle_rank: feature '" + std::string(kFeatureNames[feature]) +
                                   "' has a single class in split " + std::string(to_string(split)));

    OracleRanking out;
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::vector<double> mean[2];
        for (int c = 0; c < 2; ++c) {
            mean[c].assign(dim, 0.0);
            for (const auto& v : pooled[c][l])
                for (std::size_t d = 0; d < dim; ++d) mean[c][d] += v[d];
            for (auto& x : mean[c]) x /= static_cast<double>(pooled[c][l].size());
        }
        std::vector<double> w(dim);
        double norm = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            w[d] = mean[1][d] - mean[0][d];
            norm += w[d] * w[d];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            out.scores.push_back(0.0);
            continue;
        }
        for (auto& x : w) x /= norm;

        double m[2] = {0.0, 0.0}, ss[2] = {0.0, 0.0};
        std::vector<double> proj[2];
        for (int c = 0; c < 2; ++c) {
            for (const auto& v : pooled[c][l]) {
                double z = 0.0;
                for (std::size_t d = 0; d < dim; ++d) z += w[d] * v[d];
                proj[c].push_back(z);
                m[c] += z;
            }
            m[c] /= static_cast<double>(proj[c].size());
            for (double z : proj[c]) ss[c] += (z - m[c]) * (z - m[c]);
        }
        const double n = static_cast<double>(proj[0].size() + proj[1].size());
        const double pooled_var = n > 2.0 ? (ss[0] + ss[1]) / (n - 2.0) : (ss[0] + ss[1]) / n;
        const double gap = m[1] - m[0];
        out.scores.push_back(pooled_var > 0.0 ? gap * gap / pooled_var : 0.0);
    }
    for (std::size_t l = 1; l < out.scores.size(); ++l)
        if (out.scores[l] > out.scores[out.argmax]) out.argmax = l;
    return out;
}

} // namespace lprobe
