#include "lprobe/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <omp.h>

#include "lprobe/errors.hpp"
#include "lprobe/hash.hpp"

namespace lprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// --- grid spec --------------------------------------------------------------

std::vector<LayerMode> GridSpec::resolved_layers() const {
    if (!layer_choices.empty()) return layer_choices;
    std::vector<LayerMode> all;
    for (std::size_t l = 0; l < n_layers; ++l) all.push_back(LayerMode::fixed(l));
    all.push_back(LayerMode::weighted_sum());
    return all;
}

GridSpec fixed_point_grid() {
    GridSpec s;
    s.learning_rates = {1e-3};
    s.weight_decays = {1e-4};
    s.dropout_ps = {0.3};
    s.classifier_bottlenecks = {std::nullopt};
    s.shared_dense_bottlenecks = {std::nullopt};
    return s;
}

void validate(const GridSpec& s) {
    auto nonempty = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("grid spec: '") + what + "' must not be empty");
    };
    nonempty(!s.learning_rates.empty(), "learning_rates");
    nonempty(!s.weight_decays.empty(), "weight_decays");
    nonempty(!s.dropout_ps.empty(), "dropout_ps");
    nonempty(!s.classifier_bottlenecks.empty(), "classifier_bottlenecks");
    nonempty(!s.shared_dense_bottlenecks.empty(), "shared_dense_bottlenecks");
    nonempty(!s.head_modes.empty(), "head_modes");
    nonempty(!s.shared_dense_flags.empty(), "shared_dense_flags");
    if (s.n_layers == 0 || s.input_dim == 0 || s.n_features == 0)
        throw ConfigError("grid spec: n_layers, input_dim and n_features must be >= 1");
    for (const auto& l : s.resolved_layers())
        if (!l.is_weighted_sum() && l.index >= s.n_layers)
            throw ConfigError("grid spec: layer " + std::to_string(l.index) + " out of range");
}

namespace {

ojson bottlenecks_json(const std::vector<Bottleneck>& v) {
    ojson a = ojson::array();
    for (const auto& b : v) a.push_back(b ? ojson(*b) : ojson(nullptr));
    return a;
}

std::vector<Bottleneck> bottlenecks_from(const ojson& a) {
    std::vector<Bottleneck> out;
    for (const auto& b : a) {
        if (b.is_null() || (b.is_string() && (b == "none" || b == "None")))
            out.emplace_back(std::nullopt);
        else
            out.emplace_back(b.get<std::size_t>());
    }
    return out;
}

std::string head_mode_name(HeadMode m) { return m == HeadMode::single ? "single" : "multi"; }

std::vector<std::string> feature_names_of(const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.emplace_back(kFeatureNames.at(i));
    return out;
}

ojson eval_json(const EvalOptions& e) {
    return ojson{{"threshold", e.threshold}, {"n_boot", e.n_boot}, {"level", e.level}, {"seed", e.seed}};
}

} // namespace

ojson to_json(const GridSpec& s) {
    ojson j;
    j["learning_rates"] = s.learning_rates;
    j["weight_decays"] = s.weight_decays;
    j["dropout_ps"] = s.dropout_ps;
    j["classifier_bottlenecks"] = bottlenecks_json(s.classifier_bottlenecks);
    j["shared_dense_bottlenecks"] = bottlenecks_json(s.shared_dense_bottlenecks);
    ojson heads = ojson::array();
    for (auto h : s.head_modes) heads.push_back(head_mode_name(h));
    j["head_modes"] = heads;
    j["shared_dense_flags"] = s.shared_dense_flags;
    ojson layers = ojson::array();
    for (const auto& l : s.layer_choices) layers.push_back(l.label());
    j["layer_choices"] = layers;
    j["n_layers"] = s.n_layers;
    j["input_dim"] = s.input_dim;
    j["n_features"] = s.n_features;
    j["epochs"] = s.epochs;
    j["batch_size"] = s.batch_size;
    j["seed"] = s.seed;
    j["ood_excluded"] = feature_names_of(s.ood_excluded);
    j["eval"] = eval_json(s.eval);
    return j;
}

GridSpec grid_spec_from_json(const ojson& j) {
    GridSpec s;
    try {
        if (j.contains("learning_rates")) s.learning_rates = j.at("learning_rates").get<std::vector<double>>();
        if (j.contains("weight_decays")) s.weight_decays = j.at("weight_decays").get<std::vector<double>>();
        if (j.contains("dropout_ps")) s.dropout_ps = j.at("dropout_ps").get<std::vector<double>>();
        if (j.contains("classifier_bottlenecks"))
            s.classifier_bottlenecks = bottlenecks_from(j.at("classifier_bottlenecks"));
        if (j.contains("shared_dense_bottlenecks"))
            s.shared_dense_bottlenecks = bottlenecks_from(j.at("shared_dense_bottlenecks"));
        if (j.contains("head_modes")) {
            s.head_modes.clear();
            for (const auto& h : j.at("head_modes")) {
                const auto name = h.get<std::string>();
                if (name == "single")
                    s.head_modes.push_back(HeadMode::single);
                else if (name == "multi")
                    s.head_modes.push_back(HeadMode::multi);
                else
                    throw ConfigError("grid spec: unknown head mode '" + name + "'");
            }
        }
        if (j.contains("shared_dense_flags"))
            s.shared_dense_flags = j.at("shared_dense_flags").get<std::vector<bool>>();
        if (j.contains("layer_choices")) {
            s.layer_choices.clear();
            for (const auto& l : j.at("layer_choices")) {
                const auto text = l.is_number() ? std::to_string(l.get<std::size_t>()) : l.get<std::string>();
                const auto mode = LayerMode::parse(text);
                if (!mode) throw ConfigError("grid spec: bad layer choice '" + text + "'");
                s.layer_choices.push_back(*mode);
            }
        }
        s.n_layers = j.value("n_layers", s.n_layers);
        s.input_dim = j.value("input_dim", s.input_dim);
        s.n_features = j.value("n_features", s.n_features);
        s.epochs = j.value("epochs", s.epochs);
        s.batch_size = j.value("batch_size", s.batch_size);
        s.seed = j.value("seed", s.seed);
        if (j.contains("ood_excluded")) {
            s.ood_excluded.clear();
            for (const auto& f : j.at("ood_excluded")) {
                const auto idx = parse_feature(f.get<std::string>());
                if (!idx) throw ConfigError("grid spec: unknown feature '" + f.get<std::string>() + "'");
                s.ood_excluded.push_back(*idx);
            }
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            s.eval.threshold = e.value("threshold", s.eval.threshold);
            s.eval.n_boot = e.value("n_boot", s.eval.n_boot);
            s.eval.level = e.value("level", s.eval.level);
            s.eval.seed = e.value("seed", s.eval.seed);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("grid spec: ") + e.what());
    }
    return s;
}

std::vector<GridPoint> expand_grid(const GridSpec& spec) {
    validate(spec);
    std::vector<GridPoint> out;
    std::set<std::string> seen;
    for (auto head : spec.head_modes)
        for (bool shared : spec.shared_dense_flags)
            for (const auto& layer : spec.resolved_layers())
                for (double lr : spec.learning_rates)
                    for (double wd : spec.weight_decays)
                        for (double dp : spec.dropout_ps)
                            for (const auto& cb : spec.classifier_bottlenecks)
                                for (const auto& sb : spec.shared_dense_bottlenecks) {
                                    GridPoint p;
                                    p.arch.head_mode = head;
                                    p.arch.shared_dense = shared;
                                    p.arch.shared_dense_bottleneck = sb;
                                    p.arch.classifier_bottleneck = cb;
                                    p.arch.layer_mode = layer;
                                    p.arch.n_layers = spec.n_layers;
                                    p.arch.input_dim = spec.input_dim;
                                    p.arch.n_features = spec.n_features;
                                    p.arch.dropout_p = dp;
                                    p.arch = normalized(p.arch);
                                    p.train.learning_rate = lr;
                                    p.train.weight_decay = wd;
                                    p.train.dropout_p = dp;
                                    p.train.epochs = spec.epochs;
                                    p.train.batch_size = spec.batch_size;
                                    p.train.seed = spec.seed;
                                    const std::string key =
                                        to_json(p.arch).dump() + to_json(p.train).dump();
                                    if (seen.insert(key).second) out.push_back(std::move(p));
                                }
    return out;
}

// --- run results ------------------------------------------------------------

const MetricReport* RunResult::report(std::string_view split) const noexcept {
    if (split == "test") return test ? &*test : nullptr;
    if (split == "ood_test") return ood_test ? &*ood_test : nullptr;
    return nullptr;
}

ojson to_json(const RunResult& r) {
    ojson j;
    j["run_id"] = r.run_id;
    j["status"] = r.status;
    j["error"] = r.error;
    j["architecture"] = to_json(r.arch);
    j["train"] = to_json(r.train);
    j["reports"] = ojson{{"test", r.test ? to_json(*r.test) : ojson(nullptr)},
                         {"ood_test", r.ood_test ? to_json(*r.ood_test) : ojson(nullptr)}};
    j["final_train_loss"] = r.final_train_loss;
    j["params_file"] = r.params_file;
    j["epoch_log_file"] = r.epoch_log_file;
    j["seconds"] = r.seconds;
    return j;
}

RunResult run_result_from_json(const ojson& j) {
    RunResult r;
    r.run_id = j.at("run_id").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", std::string{});
    r.arch = architecture_from_json(j.at("architecture"));
    r.train = train_config_from_json(j.at("train"));
    const auto& reps = j.at("reports");
    if (reps.contains("test") && !reps.at("test").is_null()) r.test = report_from_json(reps.at("test"));
    if (reps.contains("ood_test") && !reps.at("ood_test").is_null())
        r.ood_test = report_from_json(reps.at("ood_test"));
    r.final_train_loss = j.value("final_train_loss", 0.0);
    r.params_file = j.value("params_file", std::string{});
    r.epoch_log_file = j.value("epoch_log_file", std::string{});
    r.seconds = j.value("seconds", 0.0);
    return r;
}

std::string compute_run_id(const GridPoint& point, const EvalOptions& eval,
                           std::uint64_t dataset_fingerprint) {
    const ojson key{{"architecture", to_json(normalized(point.arch))},
                    {"train", to_json(point.train)},
                    {"eval", eval_json(eval)},
                    {"dataset", to_hex(dataset_fingerprint)}};
    Fnv1a64 h;
    h.update(key.dump());
    return to_hex(h.digest());
}

namespace {

void write_atomic(const fs::path& path, std::span<const std::byte> bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

void write_atomic(const fs::path& path, const std::string& text) {
    write_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::optional<RunResult> load_run(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        return run_result_from_json(ojson::parse(in));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

RunResult execute_run(const PooledDataset& data, const GridSpec& spec, const GridPoint& point,
                      const std::string& run_id, const fs::path& runs_dir) {
    const auto started = std::chrono::steady_clock::now();
    RunResult r;
    r.run_id = run_id;
    r.arch = point.arch;
    r.train = point.train;
    try {
        auto trained = train(data, point.arch, point.train);
        r.final_train_loss = trained.logs.back().train_loss;
        r.params_file = run_id + ".lppm";
        r.epoch_log_file = run_id + ".epochs.jsonl";
        write_atomic(runs_dir / r.params_file, encode_params(point.arch, trained.params));
        std::string log_text;
        for (const auto& l : trained.logs) log_text += to_json(l).dump() + "\n";
        write_atomic(runs_dir / r.epoch_log_file, log_text);
        if (!data.test.empty())
            r.test = evaluate(trained.params, point.arch, data.test, {}, spec.eval, "test");
        if (!data.ood_test.empty())
            r.ood_test = evaluate(trained.params, point.arch, data.ood_test, spec.ood_excluded,
                                  spec.eval, "ood_test");
        r.status = "completed";
    } catch (const std::exception& e) {
        r.status = "failed";
        r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_atomic(runs_dir / (run_id + ".json"), to_json(r).dump(2) + "\n");
    return r;
}

} // namespace

GridOutcome run_grid(const PooledDataset& data, const GridSpec& spec_in, const RunOptions& options) {
    GridSpec spec = spec_in;
    spec.n_layers = data.n_layers;
    spec.input_dim = data.dim;
    if (options.results_dir.empty()) throw ConfigError("run_grid: results_dir is required");
    if (options.parallelism == 0) throw ConfigError("run_grid: parallelism must be >= 1");
    const auto points = expand_grid(spec);
    const fs::path runs_dir = options.results_dir / "runs";
    fs::create_directories(runs_dir);

    std::vector<std::string> ids;
    for (const auto& p : points) ids.push_back(compute_run_id(p, spec.eval, data.fingerprint));

    std::vector<std::optional<RunResult>> slots(points.size());
    std::vector<std::size_t> pending;
    GridOutcome outcome;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (options.resume) {
            auto prior = load_run(runs_dir / (ids[i] + ".json"));
            if (prior && prior->status == "completed") {
                slots[i] = std::move(prior);
                ++outcome.reused;
                continue;
            }
        }
        pending.push_back(i);
    }
    if (options.max_new_runs > 0 && pending.size() > options.max_new_runs)
        pending.resize(options.max_new_runs);

    const auto n_pending = static_cast<std::int64_t>(pending.size());
    const int threads = static_cast<int>(options.parallelism);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::int64_t k = 0; k < n_pending; ++k) {
        const std::size_t i = pending[static_cast<std::size_t>(k)];
        slots[i] = execute_run(data, spec, points[i], ids[i], runs_dir);
    }

    outcome.executed = pending.size();
    for (auto& s : slots) {
        if (!s) continue;
        if (s->status != "completed") ++outcome.failed;
        outcome.results.push_back(std::move(*s));
    }
    return outcome;
}

GridOutcome run_grid(const DatasetManifest& manifest, const GridSpec& spec, const RunOptions& options) {
    const auto violations = validate_manifest(manifest);
    if (!violations.empty())
        throw ConfigError("run_grid: manifest has " + std::to_string(violations.size()) +
                          " violation(s)");
    return run_grid(load_pooled(manifest), spec, options);
}

std::vector<RunResult> load_results(const fs::path& results_dir) {
    const fs::path runs_dir = results_dir / "runs";
    std::vector<fs::path> files;
    if (fs::exists(runs_dir))
        for (const auto& entry : fs::directory_iterator(runs_dir)) {
            const auto& p = entry.path();
            if (p.extension() == ".json") files.push_back(p);
        }
    std::sort(files.begin(), files.end());
    std::vector<RunResult> out;
    for (const auto& f : files)
        if (auto r = load_run(f)) out.push_back(std::move(*r));
    return out;
}

// --- selection and analysis -------------------------------------------------

namespace {

Bottleneck normalize_width(Bottleneck b, std::size_t default_width) {
    return b == default_width ? std::nullopt : b;
}

std::string layer_row_label(const LayerMode& l) {
    return l.is_weighted_sum() ? std::string("Weighted Sum") : std::to_string(l.index);
}

} // namespace

bool ResultFilter::matches(const RunResult& r) const {
    const auto a = normalized(r.arch);
    if (head_mode && a.head_mode != *head_mode) return false;
    if (shared_dense && a.shared_dense != *shared_dense) return false;
    if (learning_rate && r.train.learning_rate != *learning_rate) return false;
    if (weight_decay && r.train.weight_decay != *weight_decay) return false;
    if (dropout_p && r.train.dropout_p != *dropout_p) return false;
    if (classifier_bottleneck &&
        a.classifier_bottleneck != normalize_width(*classifier_bottleneck, a.input_dim))
        return false;
    if (shared_dense_bottleneck && a.shared_dense &&
        a.shared_dense_bottleneck != normalize_width(*shared_dense_bottleneck, a.input_dim))
        return false;
    return true;
}

ResultFilter reporting_point_filter() {
    ResultFilter f;
    f.learning_rate = 1e-3;
    f.weight_decay = 1e-4;
    f.dropout_p = 0.3;
    f.classifier_bottleneck = Bottleneck{};
    f.shared_dense_bottleneck = Bottleneck{};
    return f;
}

namespace {

/// Matching completed runs keyed by layer; throws on duplicates.
std::map<LayerMode, const RunResult*> runs_by_layer(const std::vector<RunResult>& results,
                                                    const ResultFilter& filter, std::string_view split) {
    std::map<LayerMode, const RunResult*> out;
    for (const auto& r : results) {
        if (r.status != "completed" || !filter.matches(r) || !r.report(split)) continue;
        auto [it, fresh] = out.emplace(r.arch.layer_mode, &r);
        if (!fresh)
            throw std::invalid_argument("filter matches more than one run for layer " +
                                        r.arch.layer_mode.label() + " (runs " + it->second->run_id +
                                        ", " + r.run_id + "); narrow the filter");
    }
    return out;
}

} // namespace

LayerTable collect_layer_scores(const std::vector<RunResult>& results, const ResultFilter& filter,
                                std::string_view split) {
    LayerTable table;
    for (const auto& [layer, run] : runs_by_layer(results, filter, split)) {
        const MetricReport& rep = *run->report(split);
        auto& row = table[layer];
        for (const auto& f : rep.features)
            if (f.balanced_accuracy) row[f.feature] = ScoreCell{*f.balanced_accuracy, f.ci_low, f.ci_high};
        if (rep.macro_balanced_accuracy)
            row[std::string(kMacroFeature)] = ScoreCell{*rep.macro_balanced_accuracy, {}, {}};
    }
    return table;
}

LayerAnalysis analyze_layers(const LayerTable& table, std::size_t n_layers) {
    if (n_layers == 0) throw std::invalid_argument("analyze_layers: n_layers must be >= 1");
    std::vector<std::string> missing;
    for (std::size_t l = 0; l < n_layers; ++l)
        if (!table.contains(LayerMode::fixed(l))) missing.push_back("layer " + std::to_string(l));
    if (!table.contains(LayerMode::weighted_sum())) missing.emplace_back("weighted_sum");
    if (!missing.empty()) {
        std::string msg = "analyze_layers: incomplete coverage, missing:";
        for (const auto& m : missing) msg += " " + m + ";";
        throw std::invalid_argument(msg);
    }

    // Canonical feature order first, then anything else, macro last.
    std::vector<std::string> features;
    std::set<std::string> keys;
    for (const auto& [layer, row] : table)
        for (const auto& [name, cell] : row) keys.insert(name);
    for (auto name : kFeatureNames)
        if (keys.erase(std::string(name))) features.emplace_back(name);
    const bool has_macro = keys.erase(std::string(kMacroFeature)) > 0;
    features.insert(features.end(), keys.begin(), keys.end());
    if (features.empty() && has_macro) features.emplace_back(kMacroFeature);
    if (features.empty()) throw std::invalid_argument("analyze_layers: no scores in table");

    auto score = [&](const LayerMode& l, const std::string& f) {
        const auto& row = table.at(l);
        const auto it = row.find(f);
        if (it == row.end())
            throw std::invalid_argument("analyze_layers: missing cell (" + l.label() + ", " + f + ")");
        return it->second.value;
    };

    LayerAnalysis a;
    a.n_layers = n_layers;
    double best_mean = -1.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        double m = 0.0;
        for (const auto& f : features) m += score(LayerMode::fixed(l), f);
        m /= static_cast<double>(features.size());
        if (m > best_mean) {
            best_mean = m;
            a.average_best_layer = l;
        }
    }

    for (const auto& f : features) {
        FeatureLayerSummary s;
        s.feature = f;
        s.best = s.worst = score(LayerMode::fixed(0), f);
        for (std::size_t l = 1; l < n_layers; ++l) {
            const double v = score(LayerMode::fixed(l), f);
            if (v > s.best) {
                s.best = v;
                s.best_layer = l;
            }
            if (v < s.worst) {
                s.worst = v;
                s.worst_layer = l;
            }
        }
        s.final = score(LayerMode::fixed(n_layers - 1), f);
        s.weighted_sum = score(LayerMode::weighted_sum(), f);
        s.at_average_best = score(LayerMode::fixed(a.average_best_layer), f);
        a.features.push_back(s);
    }

    const double k = static_cast<double>(a.features.size());
    for (const auto& s : a.features) {
        a.best_minus_worst += (s.best - s.worst) / k;
        a.best_minus_final += (s.best - s.final) / k;
        a.weighted_sum_minus_worst += (s.weighted_sum - s.worst) / k;
        a.weighted_sum_minus_final += (s.weighted_sum - s.final) / k;
        a.weighted_sum_minus_best += (s.weighted_sum - s.best) / k;
        a.weighted_sum_minus_average_best += (s.weighted_sum - s.at_average_best) / k;
        a.average_best_minus_final += (s.at_average_best - s.final) / k;
    }
    return a;
}

LayerAnalysis analyze_layers(const std::vector<RunResult>& results, const ResultFilter& filter,
                             std::string_view split) {
    const auto table = collect_layer_scores(results, filter, split);
    std::size_t n_layers = 0;
    for (const auto& r : results)
        if (filter.matches(r)) n_layers = std::max(n_layers, r.arch.n_layers);
    if (n_layers == 0) throw std::invalid_argument("analyze_layers: no results match the filter");
    return analyze_layers(table, n_layers);
}

namespace {

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string points(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f", fraction * 100.0);
    return buf;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left = false) {
    if (s.size() >= width) return s;
    return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

} // namespace

std::string render_analysis(const LayerAnalysis& a) {
    std::ostringstream out;
    out << "average best layer: " << a.average_best_layer << "\n";
    out << pad("feature", 36, true) << pad("best", 10) << pad("worst", 10) << pad("final", 8)
        << pad("wsum", 8) << pad("best-worst", 12) << pad("best-final", 12) << pad("ws-best", 10)
        << "\n";
    for (const auto& s : a.features) {
        out << pad(s.feature, 36, true) << pad(fixed2(s.best) + " (" + std::to_string(s.best_layer) + ")", 10)
            << pad(fixed2(s.worst) + " (" + std::to_string(s.worst_layer) + ")", 10)
            << pad(fixed2(s.final), 8) << pad(fixed2(s.weighted_sum), 8)
            << pad(points(s.best - s.worst), 12) << pad(points(s.best - s.final), 12)
            << pad(points(s.weighted_sum - s.best), 10) << "\n";
    }
    out << "mean deltas (percentage points):\n"
        << "  best - worst          " << points(a.best_minus_worst) << "\n"
        << "  best - final          " << points(a.best_minus_final) << "\n"
        << "  wsum - worst          " << points(a.weighted_sum_minus_worst) << "\n"
        << "  wsum - final          " << points(a.weighted_sum_minus_final) << "\n"
        << "  wsum - best           " << points(a.weighted_sum_minus_best) << "\n"
        << "  wsum - average best   " << points(a.weighted_sum_minus_average_best) << "\n"
        << "  average best - final  " << points(a.average_best_minus_final) << "\n";
    return out.str();
}

// --- tables -----------------------------------------------------------------

std::string cell_label(const ArchCell& c, std::size_t n_features) {
    const std::string heads = c.head_mode == HeadMode::single ? "1" : std::to_string(n_features);
    return heads + (c.shared_dense ? ", sd" : ", No sd");
}

std::string cell_key(const ArchCell& c) {
    return std::string(c.head_mode == HeadMode::single ? "single" : "multi") +
           (c.shared_dense ? "_sd" : "_no_sd");
}

TableData build_table(const std::vector<RunResult>& results, const ResultFilter& filter,
                      std::string_view split) {
    TableData table;
    for (auto head : {HeadMode::single, HeadMode::multi})
        for (bool shared : {true, false}) {
            ResultFilter f = filter;
            f.head_mode = head;
            f.shared_dense = shared;
            for (const auto& [layer, run] : runs_by_layer(results, f, split)) {
                const auto& macro = run->report(split)->macro_balanced_accuracy;
                if (macro) table[ArchCell{head, shared}][layer] = *macro;
            }
        }
    return table;
}

RenderedTable render_table(const TableData& table, std::size_t n_features) {
    std::set<LayerMode> rows;
    for (const auto& [cell, col] : table)
        for (const auto& [layer, v] : col) rows.insert(layer);

    std::map<ArchCell, std::string> column_max;
    for (const auto& [cell, col] : table) {
        double best = -1.0;
        for (const auto& [layer, v] : col) best = std::max(best, std::stod(fixed2(v)));
        column_max[cell] = fixed2(best);
    }
    auto cell_text = [&](const ArchCell& cell, const LayerMode& layer) -> std::string {
        const auto& col = table.at(cell);
        const auto it = col.find(layer);
        if (it == col.end()) return "";
        const std::string s = fixed2(it->second);
        return s == column_max.at(cell) ? s + "*" : s;
    };

    RenderedTable out;
    std::size_t label_w = 5;
    for (const auto& r : rows) label_w = std::max(label_w, layer_row_label(r).size());
    std::vector<std::size_t> widths;
    std::ostringstream text, csv;
    text << pad("Layer", label_w, true);
    csv << "layer";
    for (const auto& [cell, col] : table) {
        const std::string label = cell_label(cell, n_features);
        widths.push_back(std::max<std::size_t>(label.size(), 5) + 2);
        text << pad(label, widths.back());
        csv << "," << cell_key(cell);
    }
    text << "\n";
    csv << "\n";
    for (const auto& r : rows) {
        text << pad(layer_row_label(r), label_w, true);
        csv << layer_row_label(r);
        std::size_t c = 0;
        for (const auto& [cell, col] : table) {
            const std::string v = cell_text(cell, r);
            text << pad(v.empty() ? "-" : v, widths[c++]);
            csv << "," << v;
        }
        text << "\n";
        csv << "\n";
    }
    out.text = text.str();
    out.csv = csv.str();
    return out;
}

TableData parse_table_csv(std::string_view csv) {
    auto split_line = [](const std::string& line) {
        std::vector<std::string> parts;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                parts.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur += ch;
            }
        }
        parts.push_back(cur);
        return parts;
    };
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line)) return {};
    const auto header = split_line(line);
    std::vector<ArchCell> cells;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const auto& k = header[i];
        ArchCell c;
        if (k.rfind("single", 0) == 0)
            c.head_mode = HeadMode::single;
        else if (k.rfind("multi", 0) == 0)
            c.head_mode = HeadMode::multi;
        else
            throw FormatError("table csv: unknown column '" + k + "'");
        c.shared_dense = k.size() >= 3 && k.substr(k.size() - 3) == "_sd" && k.find("_no_sd") == std::string::npos;
        cells.push_back(c);
    }
    TableData t;
    for (const auto& c : cells) t[c];
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto parts = split_line(line);
        const auto layer = parts[0] == "Weighted Sum" ? std::optional(LayerMode::weighted_sum())
                                                      : LayerMode::parse(parts[0]);
        if (!layer) throw FormatError("table csv: bad layer label '" + parts[0] + "'");
        for (std::size_t i = 1; i < parts.size() && i - 1 < cells.size(); ++i) {
            std::string v = parts[i];
            if (!v.empty() && v.back() == '*') v.pop_back();
            if (!v.empty()) t[cells[i - 1]][*layer] = std::stod(v);
        }
    }
    return t;
}

// --- plot data --------------------------------------------------------------

std::optional<PlotFigure> parse_figure(std::string_view s) {
    if (s == "per_layer_lines") return PlotFigure::per_layer_lines;
    if (s == "best_worst_bars") return PlotFigure::best_worst_bars;
    if (s == "lr_comparison") return PlotFigure::lr_comparison;
    return std::nullopt;
}

namespace {

void plot_row(std::ostringstream& out, const std::string& feature, const std::string& layer,
              double lr, std::string_view split, const ScoreCell& s) {
    out << feature << "," << layer << "," << lr << "," << split << "," << num(s.value) << ","
        << (s.ci_low ? num(*s.ci_low) : "") << "," << (s.ci_high ? num(*s.ci_high) : "") << "\n";
}

std::vector<std::string> plotted_features(const LayerTable& table) {
    std::set<std::string> keys;
    for (const auto& [layer, row] : table)
        for (const auto& [name, cell] : row)
            if (name != kMacroFeature) keys.insert(name);
    std::vector<std::string> out;
    for (auto name : kFeatureNames)
        if (keys.erase(std::string(name))) out.emplace_back(name);
    out.insert(out.end(), keys.begin(), keys.end());
    return out;
}

void emit_layer_lines(std::ostringstream& out, const LayerTable& table, double lr,
                      std::string_view split) {
    for (const auto& f : plotted_features(table))
        for (const auto& [layer, row] : table)
            if (const auto it = row.find(f); it != row.end())
                plot_row(out, f, layer.label(), lr, split, it->second);
}

} // namespace

std::string emit_plot_data(const std::vector<RunResult>& results, PlotFigure figure,
                           const ResultFilter& filter, std::string_view split) {
    std::ostringstream out;
    out.precision(10);
    out << kPlotCsvHeader << "\n";
    if (results.empty()) return out.str();

    if (figure == PlotFigure::lr_comparison) {
        ResultFilter any_lr = filter;
        any_lr.learning_rate.reset();
        std::set<double> lrs;
        for (const auto& r : results)
            if (r.status == "completed" && any_lr.matches(r)) lrs.insert(r.train.learning_rate);
        if (lrs.empty()) throw std::invalid_argument("plotdata: no results match the filter");
        for (double lr : lrs) {
            ResultFilter f = any_lr;
            f.learning_rate = lr;
            emit_layer_lines(out, collect_layer_scores(results, f, split), lr, split);
        }
        return out.str();
    }

    const auto runs = runs_by_layer(results, filter, split);
    if (runs.empty()) throw std::invalid_argument("plotdata: no results match the filter");
    const double lr = runs.begin()->second->train.learning_rate;
    const auto table = collect_layer_scores(results, filter, split);

    if (figure == PlotFigure::per_layer_lines) {
        emit_layer_lines(out, table, lr, split);
        return out.str();
    }

    std::size_t n_layers = runs.begin()->second->arch.n_layers;
    const auto analysis = analyze_layers(table, n_layers);
    for (const auto& s : analysis.features) {
        const auto& best = table.at(LayerMode::fixed(s.best_layer)).at(s.feature);
        const auto& worst = table.at(LayerMode::fixed(s.worst_layer)).at(s.feature);
        const auto& ws = table.at(LayerMode::weighted_sum()).at(s.feature);
        plot_row(out, s.feature, "best:" + std::to_string(s.best_layer), lr, split, best);
        plot_row(out, s.feature, "worst:" + std::to_string(s.worst_layer), lr, split, worst);
        plot_row(out, s.feature, "weighted_sum", lr, split, ws);
    }
    return out.str();
}

} // namespace lprobe
