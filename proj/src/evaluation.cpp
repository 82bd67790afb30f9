#include "lprobe/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "lprobe/errors.hpp"
#include "lprobe/numerics.hpp"

namespace lprobe {

using ojson = nlohmann::ordered_json;

Confusion confusion(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels) {
    if (preds.size() != labels.size())
        throw ShapeError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    Confusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i])
            preds[i] ? ++c.tp : ++c.fn;
        else
            preds[i] ? ++c.fp : ++c.tn;
    }
    return c;
}

double balanced_accuracy(const Confusion& c) {
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
        throw UndefinedMetricError("balanced accuracy undefined: labels contain a single class");
    const double sens = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double spec = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    return (sens + spec) / 2.0;
}

double accuracy(const Confusion& c) {
    if (c.total() == 0) throw UndefinedMetricError("accuracy undefined on an empty sample");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double nir(std::span<const std::uint8_t> labels) {
    if (labels.empty()) throw UndefinedMetricError("no-information rate undefined on empty labels");
    const auto pos = static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; }));
    return static_cast<double>(std::max(pos, labels.size() - pos)) / static_cast<double>(labels.size());
}

std::vector<std::uint8_t> PredictionSet::predicted(std::size_t f) const {
    std::vector<std::uint8_t> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = probabilities(i, f) >= threshold ? 1 : 0;
    return out;
}

std::vector<std::uint8_t> PredictionSet::actual(std::size_t f) const {
    std::vector<std::uint8_t> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = labels(i, f) != 0.0 ? 1 : 0;
    return out;
}

PredictionSet predict(const ProbeParams& params, const ArchitectureConfig& config,
                      std::span<const PooledExample> examples, double threshold) {
    PredictionSet set;
    set.threshold = threshold;
    set.probabilities = Matrix(examples.size(), config.n_features);
    set.labels = Matrix(examples.size(), config.n_features);
    if (examples.empty()) return set;
    std::vector<const PooledExample*> ptrs;
    for (const auto& e : examples) {
        ptrs.push_back(&e);
        set.record_ids.push_back(e.record_id);
    }
    RngStream unused(0, StreamKind::dropout);
    // Chunked so memory stays flat on large splits.
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < ptrs.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, ptrs.size() - start);
        const Batch chunk(ptrs.data() + start, len);
        const auto fp = forward(chunk, params, config, Mode::eval, unused);
        const Matrix targets = batch_targets(chunk, config.n_features);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t f = 0; f < config.n_features; ++f) {
                set.probabilities(start + i, f) = sigmoid(fp.logits(i, f));
                set.labels(start + i, f) = targets(i, f);
            }
    }
    return set;
}

// --- bootstrap --------------------------------------------------------------

namespace {

struct Resample {
    double value = 0.0;
    std::size_t attempts = 0;
    bool ok = false;
};

Resample draw_resample(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> labels,
                       Metric metric, RngStream rng, std::size_t budget) {
    const std::size_t n = labels.size();
    Resample r;
    while (r.attempts < budget) {
        ++r.attempts;
        Confusion c;
        for (std::size_t k = 0; k < n; ++k) {
            const auto j = static_cast<std::size_t>(rng.uniform_index(n));
            if (labels[j])
                preds[j] ? ++c.tp : ++c.fn;
            else
                preds[j] ? ++c.fp : ++c.tn;
        }
        if (metric == Metric::accuracy) {
            r.value = accuracy(c);
            r.ok = true;
            return r;
        }
        if (c.tp + c.fn > 0 && c.tn + c.fp > 0) {
            r.value = balanced_accuracy(c);
            r.ok = true;
            return r;
        }
    }
    return r;
}

RngStream metric_stream(const RngStream& rng, std::size_t feature, Metric metric) {
    return rng.derive(feature).derive(metric == Metric::accuracy ? 1 : 2);
}

} // namespace

BootstrapSamples bootstrap_samples(const PredictionSet& set, std::size_t feature, Metric metric,
                                   const RngStream& rng, std::size_t n_boot, Execution exec) {
    if (feature >= set.n_features()) throw ShapeError("bootstrap: feature index out of range");
    if (set.size() == 0) throw UndefinedMetricError("bootstrap: empty prediction set");
    const auto preds = set.predicted(feature);
    const auto labels = set.actual(feature);
    const RngStream base = metric_stream(rng, feature, metric);
    const std::size_t budget = 10 * n_boot;

    std::vector<Resample> draws(n_boot);
    if (exec == Execution::serial) {
        for (std::size_t i = 0; i < n_boot; ++i)
            draws[i] = draw_resample(preds, labels, metric, base.derive(i), budget);
    } else {
        const auto count = static_cast<std::int64_t>(n_boot);
#pragma omp parallel for schedule(static) if (n_boot * labels.size() >= (std::size_t{1} << 14))
        for (std::int64_t ii = 0; ii < count; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            draws[i] = draw_resample(preds, labels, metric, base.derive(i), budget);
        }
    }

    BootstrapSamples out;
    out.values.reserve(n_boot);
    for (const auto& d : draws) {
        out.attempts += d.attempts;
        if (!d.ok) out.exhausted = true;
        out.values.push_back(d.value);
    }
    if (out.attempts > budget) out.exhausted = true;
    return out;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

double point_estimate(const PredictionSet& set, std::size_t feature, Metric metric) {
    const Confusion c = confusion(set.predicted(feature), set.actual(feature));
    return metric == Metric::accuracy ? accuracy(c) : balanced_accuracy(c);
}

Interval percentile_interval(const BootstrapSamples& s, double level, double point) {
    const double alpha = (1.0 - level) / 2.0;
    Interval iv{quantile(s.values, alpha), quantile(s.values, 1.0 - alpha)};
    iv.low = std::min(iv.low, point);
    iv.high = std::max(iv.high, point);
    return iv;
}

double fraction_at_most(const std::vector<double>& v, double threshold) {
    const auto hits = std::count_if(v.begin(), v.end(), [&](double x) { return x <= threshold; });
    return static_cast<double>(hits) / static_cast<double>(v.size());
}

} // namespace

std::optional<Interval> bootstrap_ci(const PredictionSet& set, std::size_t feature, Metric metric,
                                     const RngStream& rng, std::size_t n_boot, double level) {
    const double point = point_estimate(set, feature, metric);
    const auto samples = bootstrap_samples(set, feature, metric, rng, n_boot);
    if (samples.exhausted) return std::nullopt;
    return percentile_interval(samples, level, point);
}

ChanceTest p_value_vs_chance(const PredictionSet& set, std::size_t feature, const RngStream& rng,
                             std::size_t n_boot) {
    const auto labels = set.actual(feature);
    const double baseline = nir(labels);
    ChanceTest t{};
    const auto acc = bootstrap_samples(set, feature, Metric::accuracy, rng, n_boot);
    t.accuracy_vs_nir = fraction_at_most(acc.values, baseline);
    (void)point_estimate(set, feature, Metric::balanced_accuracy); // throws on a single class
    const auto ba = bootstrap_samples(set, feature, Metric::balanced_accuracy, rng, n_boot);
    if (!ba.exhausted) t.balanced_vs_half = fraction_at_most(ba.values, 0.5);
    return t;
}

// --- reports ----------------------------------------------------------------

const FeatureMetrics* MetricReport::find(std::string_view feature) const noexcept {
    for (const auto& f : features)
        if (f.feature == feature) return &f;
    return nullptr;
}

std::vector<std::size_t> default_ood_exclusions() {
    return {static_cast<std::size_t>(Feature::irregular_articulatory_breakdowns),
            static_cast<std::size_t>(Feature::rapid_rate)};
}

namespace {
std::string feature_name(std::size_t f) {
    return f < kNumFeatures ? std::string(kFeatureNames[f]) : "feature_" + std::to_string(f);
}
} // namespace

MetricReport compute_report(const PredictionSet& set, std::span<const std::size_t> excluded,
                            const EvalOptions& options, std::string split_name) {
    if (set.size() == 0) throw std::invalid_argument("evaluate: empty split");
    MetricReport report;
    report.split = std::move(split_name);
    const RngStream rng(options.seed, StreamKind::bootstrap);
    PredictionSet thresholded = set;
    thresholded.threshold = options.threshold;

    double macro_sum = 0.0;
    std::size_t macro_n = 0;
    for (std::size_t f = 0; f < set.n_features(); ++f) {
        if (std::find(excluded.begin(), excluded.end(), f) != excluded.end()) {
            report.excluded_features.push_back(feature_name(f));
            continue;
        }
        FeatureMetrics m;
        m.feature = feature_name(f);
        const auto labels = thresholded.actual(f);
        const auto preds = thresholded.predicted(f);
        const Confusion c = confusion(preds, labels);
        m.n_total = labels.size();
        m.n_positive = c.tp + c.fn;
        m.accuracy = accuracy(c);
        m.nir = nir(labels);
        const auto acc = bootstrap_samples(thresholded, f, Metric::accuracy, rng, options.n_boot);
        m.p_value_vs_chance = fraction_at_most(acc.values, m.nir);

        if (m.n_positive == 0 || m.n_positive == m.n_total) {
            m.status = "single_class";
            report.undefined_features.push_back(m.feature);
        } else {
            m.balanced_accuracy = balanced_accuracy(c);
            macro_sum += *m.balanced_accuracy;
            ++macro_n;
            const auto ba =
                bootstrap_samples(thresholded, f, Metric::balanced_accuracy, rng, options.n_boot);
            if (ba.exhausted) {
                m.status = "bootstrap_exhausted";
            } else {
                m.status = "ok";
                const Interval iv = percentile_interval(ba, options.level, *m.balanced_accuracy);
                m.ci_low = iv.low;
                m.ci_high = iv.high;
                m.p_value_balanced_vs_half = fraction_at_most(ba.values, 0.5);
            }
        }
        report.features.push_back(std::move(m));
    }
    if (macro_n > 0) report.macro_balanced_accuracy = macro_sum / static_cast<double>(macro_n);
    return report;
}

MetricReport evaluate(const ProbeParams& params, const ArchitectureConfig& config,
                      std::span<const PooledExample> examples, std::span<const std::size_t> excluded,
                      const EvalOptions& options, std::string split_name) {
    if (examples.empty()) throw std::invalid_argument("evaluate: split '" + split_name + "' is empty");
    const auto set = predict(params, config, examples, options.threshold);
    return compute_report(set, excluded, options, std::move(split_name));
}

MetricReport evaluate(const ProbeParams& params, const ArchitectureConfig& config,
                      const DatasetManifest& manifest, Split split,
                      std::span<const std::size_t> excluded, const EvalOptions& options) {
    std::vector<PooledExample> examples;
    for (const auto& item : iterate_split(manifest, split))
        examples.push_back(pool_record(item.record, item.labels));
    return evaluate(params, config, examples, excluded, options, std::string(to_string(split)));
}

namespace {

ojson opt(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<double> get_opt(const ojson& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

} // namespace

ojson to_json(const MetricReport& r) {
    ojson j;
    j["split"] = r.split;
    ojson feats = ojson::array();
    for (const auto& f : r.features) {
        feats.push_back(ojson{{"feature", f.feature},
                              {"status", f.status},
                              {"balanced_accuracy", opt(f.balanced_accuracy)},
                              {"accuracy", f.accuracy},
                              {"nir", f.nir},
                              {"ci_low", opt(f.ci_low)},
                              {"ci_high", opt(f.ci_high)},
                              {"p_value_vs_chance", opt(f.p_value_vs_chance)},
                              {"p_value_balanced_vs_half", opt(f.p_value_balanced_vs_half)},
                              {"n_positive", f.n_positive},
                              {"n_total", f.n_total}});
    }
    j["features"] = std::move(feats);
    j["macro_balanced_accuracy"] = opt(r.macro_balanced_accuracy);
    j["excluded_features"] = r.excluded_features;
    j["undefined_features"] = r.undefined_features;
    return j;
}

MetricReport report_from_json(const ojson& j) {
    MetricReport r;
    r.split = j.value("split", std::string{});
    for (const auto& f : j.at("features")) {
        FeatureMetrics m;
        m.feature = f.at("feature").get<std::string>();
        m.status = f.value("status", std::string{"ok"});
        m.balanced_accuracy = get_opt(f, "balanced_accuracy");
        m.accuracy = f.at("accuracy").get<double>();
        m.nir = f.at("nir").get<double>();
        m.ci_low = get_opt(f, "ci_low");
        m.ci_high = get_opt(f, "ci_high");
        m.p_value_vs_chance = get_opt(f, "p_value_vs_chance");
        m.p_value_balanced_vs_half = get_opt(f, "p_value_balanced_vs_half");
        m.n_positive = f.at("n_positive").get<std::size_t>();
        m.n_total = f.at("n_total").get<std::size_t>();
        r.features.push_back(std::move(m));
    }
    r.macro_balanced_accuracy = get_opt(j, "macro_balanced_accuracy");
    r.excluded_features = j.value("excluded_features", std::vector<std::string>{});
    r.undefined_features = j.value("undefined_features", std::vector<std::string>{});
    return r;
}

} // namespace lprobe
