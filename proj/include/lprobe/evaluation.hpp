#pragma once

// Metric suite: balanced accuracy, accuracy, no-information rate, percentile
// bootstrap intervals and bootstrap chance tests.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lprobe/embedding_store.hpp"
#include "lprobe/matrix.hpp"
#include "lprobe/probe_model.hpp"
#include "lprobe/rng.hpp"

namespace lprobe {

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

Confusion confusion(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels);

/// Mean of sensitivity and specificity. Throws UndefinedMetricError when
/// either class is absent from the labels.
double balanced_accuracy(const Confusion& c);
double accuracy(const Confusion& c);
/// max(p, 1 - p) for the positive rate p.
double nir(std::span<const std::uint8_t> labels);

struct PredictionSet {
    std::vector<std::string> record_ids;
    Matrix probabilities; // [n × n_features]
    Matrix labels;        // [n × n_features], 0/1
    double threshold = 0.5;

    std::size_t size() const noexcept { return probabilities.rows(); }
    std::size_t n_features() const noexcept { return probabilities.cols(); }
    std::vector<std::uint8_t> predicted(std::size_t feature) const;
    std::vector<std::uint8_t> actual(std::size_t feature) const;
};

/// Eval-mode forward + sigmoid over the examples.
PredictionSet predict(const ProbeParams& params, const ArchitectureConfig& config,
                      std::span<const PooledExample> examples, double threshold = 0.5);

enum class Metric { balanced_accuracy, accuracy };
enum class Execution { serial, parallel };

struct Interval {
    double low;
    double high;
};

/// One bootstrap distribution of a metric over resampled prediction rows.
struct BootstrapSamples {
    std::vector<double> values; // n_boot entries
    std::size_t attempts = 0;   // draws including rejected ones
    bool exhausted = false;     // rejection budget (10 × n_boot) exceeded
};

/// Resample i is drawn from `rng.derive(i)`, so the distribution does not
/// depend on the execution mode or thread count. For balanced accuracy, draws
/// that lack a class are rejected and redrawn.
BootstrapSamples bootstrap_samples(const PredictionSet& set, std::size_t feature, Metric metric,
                                   const RngStream& rng, std::size_t n_boot = 1000,
                                   Execution exec = Execution::parallel);

/// Quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

/// Percentile interval, widened if needed to contain the point estimate.
/// nullopt when the rejection budget runs out. Throws UndefinedMetricError if
/// the metric is undefined on the original sample.
std::optional<Interval> bootstrap_ci(const PredictionSet& set, std::size_t feature, Metric metric,
                                     const RngStream& rng, std::size_t n_boot = 1000,
                                     double level = 0.95);

struct ChanceTest {
    double accuracy_vs_nir;                    // P(resampled accuracy <= NIR of the labels)
    std::optional<double> balanced_vs_half;    // P(resampled balanced accuracy <= 0.5)
};

ChanceTest p_value_vs_chance(const PredictionSet& set, std::size_t feature, const RngStream& rng,
                             std::size_t n_boot = 1000);

struct FeatureMetrics {
    std::string feature;
    std::string status; // "ok" | "single_class" | "bootstrap_exhausted"
    std::optional<double> balanced_accuracy;
    double accuracy = 0.0;
    double nir = 0.0;
    std::optional<double> ci_low;
    std::optional<double> ci_high;
    std::optional<double> p_value_vs_chance;        // accuracy vs NIR
    std::optional<double> p_value_balanced_vs_half; // balanced accuracy vs 0.5
    std::size_t n_positive = 0;
    std::size_t n_total = 0;

    friend bool operator==(const FeatureMetrics&, const FeatureMetrics&) = default;
};

struct MetricReport {
    std::string split;
    std::vector<FeatureMetrics> features;
    std::optional<double> macro_balanced_accuracy;
    std::vector<std::string> excluded_features;
    std::vector<std::string> undefined_features;

    const FeatureMetrics* find(std::string_view feature) const noexcept;
    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

struct EvalOptions {
    double threshold = 0.5;
    std::size_t n_boot = 1000;
    double level = 0.95;
    std::uint64_t seed = 4200;
};

/// Metrics for every feature not in `excluded` (indices into the canonical order).
MetricReport compute_report(const PredictionSet& set, std::span<const std::size_t> excluded,
                            const EvalOptions& options, std::string split_name);

MetricReport evaluate(const ProbeParams& params, const ArchitectureConfig& config,
                      std::span<const PooledExample> examples, std::span<const std::size_t> excluded,
                      const EvalOptions& options, std::string split_name);

MetricReport evaluate(const ProbeParams& params, const ArchitectureConfig& config,
                      const DatasetManifest& manifest, Split split,
                      std::span<const std::size_t> excluded, const EvalOptions& options = {});

/// Exclusions used for out-of-distribution evaluation: iab and rapid rate.
std::vector<std::size_t> default_ood_exclusions();

nlohmann::ordered_json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::ordered_json& j);

} // namespace lprobe
