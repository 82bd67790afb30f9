#pragma once

// Grid expansion, the resumable run store, and the layer-selection reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lprobe/evaluation.hpp"
#include "lprobe/pooled_dataset.hpp"
#include "lprobe/probe_model.hpp"
#include "lprobe/training.hpp"

namespace lprobe {

using Bottleneck = std::optional<std::size_t>;

struct GridSpec {
    std::vector<double> learning_rates{1e-4, 1e-3};
    std::vector<double> weight_decays{1e-4, 1e-3, 1e-2};
    std::vector<double> dropout_ps{0.2, 0.3};
    std::vector<Bottleneck> classifier_bottlenecks{std::nullopt, 700, 300};
    std::vector<Bottleneck> shared_dense_bottlenecks{std::nullopt, 700, 300};
    std::vector<HeadMode> head_modes{HeadMode::single, HeadMode::multi};
    std::vector<bool> shared_dense_flags{true, false};
    /// Empty means every fixed layer plus the weighted sum.
    std::vector<LayerMode> layer_choices;

    std::size_t n_layers = 13;
    std::size_t input_dim = 768;
    std::size_t n_features = kNumFeatures;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::uint64_t seed = 4200;
    std::vector<std::size_t> ood_excluded = default_ood_exclusions();
    EvalOptions eval;

    std::vector<LayerMode> resolved_layers() const;
};

/// Every architecture cell and layer at the reporting point: weight decay 1e-4,
/// dropout 0.3, no bottlenecks, learning rate 1e-3.
GridSpec fixed_point_grid();

void validate(const GridSpec& spec);
nlohmann::ordered_json to_json(const GridSpec& spec);
GridSpec grid_spec_from_json(const nlohmann::ordered_json& j);

struct GridPoint {
    ArchitectureConfig arch;
    TrainConfig train;
};

/// Cartesian product in canonical order
///   head_mode > shared_dense > layer > lr > weight_decay > dropout
///   > classifier_bottleneck > shared_dense_bottleneck,
/// keeping the first of any points that normalize to the same model.
std::vector<GridPoint> expand_grid(const GridSpec& spec);

struct RunResult {
    std::string run_id;
    ArchitectureConfig arch;
    TrainConfig train;
    std::string status; // "completed" | "failed"
    std::string error;
    std::optional<MetricReport> test;
    std::optional<MetricReport> ood_test;
    double final_train_loss = 0.0;
    std::string params_file;
    std::string epoch_log_file;
    double seconds = 0.0;

    const MetricReport* report(std::string_view split) const noexcept;
};

nlohmann::ordered_json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::ordered_json& j);

/// Content hash of architecture, training config, evaluation options and dataset.
std::string compute_run_id(const GridPoint& point, const EvalOptions& eval,
                           std::uint64_t dataset_fingerprint);

struct RunOptions {
    std::filesystem::path results_dir;
    std::size_t parallelism = 1;
    bool resume = false;
    /// Stop after executing this many new runs (0 = no limit).
    std::size_t max_new_runs = 0;
};

struct GridOutcome {
    std::vector<RunResult> results; // canonical grid order; absent runs omitted
    std::size_t executed = 0;
    std::size_t reused = 0;
    std::size_t failed = 0;
};

GridOutcome run_grid(const PooledDataset& data, const GridSpec& spec, const RunOptions& options);
GridOutcome run_grid(const DatasetManifest& manifest, const GridSpec& spec, const RunOptions& options);

/// Every RunResult persisted in a results directory, sorted by run id.
std::vector<RunResult> load_results(const std::filesystem::path& results_dir);

// --- selection --------------------------------------------------------------

/// Matches results on the fields that are set. Bottlenecks use a nested
/// optional: unset = any, set to nullopt = "none".
struct ResultFilter {
    std::optional<HeadMode> head_mode;
    std::optional<bool> shared_dense;
    std::optional<double> learning_rate;
    std::optional<double> weight_decay;
    std::optional<double> dropout_p;
    std::optional<Bottleneck> classifier_bottleneck;
    std::optional<Bottleneck> shared_dense_bottleneck;

    bool matches(const RunResult& r) const;
};

/// weight decay 1e-4, dropout 0.3, no bottlenecks, learning rate 1e-3, any cell.
ResultFilter reporting_point_filter();

struct ScoreCell {
    double value = 0.0;
    std::optional<double> ci_low;
    std::optional<double> ci_high;
};

inline constexpr std::string_view kMacroFeature = "macro";

/// layer choice -> feature (or "macro") -> balanced accuracy.
using LayerTable = std::map<LayerMode, std::map<std::string, ScoreCell>>;

/// Throws when two matching results land on the same layer.
LayerTable collect_layer_scores(const std::vector<RunResult>& results, const ResultFilter& filter,
                                std::string_view split);

struct FeatureLayerSummary {
    std::string feature;
    std::size_t best_layer = 0;
    std::size_t worst_layer = 0;
    double best = 0.0;
    double worst = 0.0;
    double final = 0.0;
    double weighted_sum = 0.0;
    double at_average_best = 0.0;
};

struct LayerAnalysis {
    std::size_t n_layers = 0;
    std::size_t average_best_layer = 0;
    std::vector<FeatureLayerSummary> features;
    // Means over features, as fractions (×100 for percentage points).
    double best_minus_worst = 0.0;
    double best_minus_final = 0.0;
    double weighted_sum_minus_worst = 0.0;
    double weighted_sum_minus_final = 0.0;
    double weighted_sum_minus_best = 0.0;
    double weighted_sum_minus_average_best = 0.0;
    double average_best_minus_final = 0.0;
};

/// Per-feature argmax/argmin over fixed layers (lowest index wins ties) and the
/// deltas against the final layer and the weighted sum. Per-feature rows
/// exclude "macro" unless it is the only entry. Throws when a layer or the
/// weighted sum is missing, naming the missing cells.
LayerAnalysis analyze_layers(const LayerTable& table, std::size_t n_layers);
LayerAnalysis analyze_layers(const std::vector<RunResult>& results, const ResultFilter& filter,
                             std::string_view split = "test");

std::string render_analysis(const LayerAnalysis& analysis);

// --- tables and plot data ---------------------------------------------------

struct ArchCell {
    HeadMode head_mode = HeadMode::single;
    bool shared_dense = false;

    friend auto operator<=>(const ArchCell& a, const ArchCell& b) noexcept {
        // Column order: 1 sd, 1 no sd, 5 sd, 5 no sd.
        const int ka = (a.head_mode == HeadMode::single ? 0 : 2) + (a.shared_dense ? 0 : 1);
        const int kb = (b.head_mode == HeadMode::single ? 0 : 2) + (b.shared_dense ? 0 : 1);
        return ka <=> kb;
    }
    friend bool operator==(const ArchCell&, const ArchCell&) = default;
};

/// "1, sd" style label: number of heads, then with/without shared dense.
std::string cell_label(const ArchCell& cell, std::size_t n_features = kNumFeatures);
/// "single_sd" style key used in CSV headers.
std::string cell_key(const ArchCell& cell);

/// cell -> layer choice -> macro balanced accuracy.
using TableData = std::map<ArchCell, std::map<LayerMode, double>>;

/// The filter's head/shared fields are ignored; every cell is collected.
TableData build_table(const std::vector<RunResult>& results, const ResultFilter& filter,
                      std::string_view split = "test");

struct RenderedTable {
    std::string text;
    std::string csv;
};

/// Rows: fixed layers ascending, then "Weighted Sum". Values at 2 decimals;
/// every cell equal to its column maximum (after rounding) is flagged with '*'.
RenderedTable render_table(const TableData& table, std::size_t n_features = kNumFeatures);
TableData parse_table_csv(std::string_view csv);

enum class PlotFigure { per_layer_lines, best_worst_bars, lr_comparison };
std::optional<PlotFigure> parse_figure(std::string_view s);

inline constexpr std::string_view kPlotCsvHeader =
    "feature,layer_or_sum,learning_rate,split,balanced_accuracy,ci_low,ci_high";

/// Long-format CSV, one row per drawn point. lr_comparison ignores the
/// filter's learning rate.
std::string emit_plot_data(const std::vector<RunResult>& results, PlotFigure figure,
                           const ResultFilter& filter, std::string_view split = "test");

} // namespace lprobe
