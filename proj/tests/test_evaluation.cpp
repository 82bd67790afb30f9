#include <doctest.h>

#include <algorithm>
#include <random>

#include "lprobe/errors.hpp"
#include "lprobe/evaluation.hpp"
#include "lprobe/synthgen.hpp"
#include "lprobe/training.hpp"
#include "oracles.hpp"

using namespace lprobe;

namespace {

using Bits = std::vector<std::uint8_t>;

/// One-feature prediction set whose probabilities reproduce `preds` at 0.5.
PredictionSet single_feature(const Bits& preds, const Bits& labels, std::size_t n_features = 1) {
    PredictionSet s;
    s.probabilities = Matrix(preds.size(), n_features);
    s.labels = Matrix(preds.size(), n_features);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        s.record_ids.push_back("r" + std::to_string(i));
        for (std::size_t f = 0; f < n_features; ++f) {
            s.probabilities(i, f) = preds[i] ? 0.9 : 0.1;
            s.labels(i, f) = labels[i];
        }
    }
    return s;
}

Bits random_bits(std::size_t n, std::mt19937_64& gen, double p = 0.5) {
    std::bernoulli_distribution b(p);
    Bits v(n);
    for (auto& x : v) x = b(gen);
    return v;
}

} // namespace

TEST_CASE("confusion examples") {
    const Bits y{1, 0, 1, 0};
    CHECK(confusion(Bits{1, 0, 1, 0}, y) == Confusion{2, 0, 2, 0});
    CHECK(confusion(Bits{0, 1, 0, 1}, y) == Confusion{0, 2, 0, 2});
    CHECK(confusion(Bits{1, 1, 0, 0}, y) == Confusion{1, 1, 1, 1});
    CHECK_THROWS_AS(confusion(Bits{1, 0}, y), ShapeError);
}

TEST_CASE("balanced accuracy, accuracy and NIR examples") {
    CHECK(balanced_accuracy(Confusion{8, 10, 30, 2}) == doctest::Approx(0.775).epsilon(1e-15));
    CHECK(balanced_accuracy(Confusion{5, 0, 5, 0}) == 1.0);
    CHECK(balanced_accuracy(Confusion{5, 5, 0, 0}) == 0.5);
    CHECK_THROWS_AS(balanced_accuracy(Confusion{3, 0, 0, 2}), UndefinedMetricError);
    CHECK_THROWS_AS(balanced_accuracy(Confusion{0, 2, 3, 0}), UndefinedMetricError);
    CHECK(accuracy(Confusion{8, 10, 30, 2}) == doctest::Approx(38.0 / 50.0));

    Bits y(100, 0);
    std::fill(y.begin(), y.begin() + 30, 1);
    CHECK(nir(y) == doctest::Approx(0.7));
    Bits half(50, 0);
    half.resize(100, 1);
    CHECK(nir(half) == 0.5);
    Bits slow(686, 0);
    std::fill(slow.begin(), slow.begin() + 401, 1);
    CHECK(nir(slow) == doctest::Approx(401.0 / 686.0).epsilon(1e-15));
    CHECK(nir(slow) == doctest::Approx(0.5845).epsilon(1e-4));
}

TEST_CASE("metrics match brute-force enumeration on random vectors") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + gen() % 300;
        const auto p = random_bits(n, gen, 0.1 + 0.8 * (gen() % 100) / 100.0);
        auto y = random_bits(n, gen, 0.1 + 0.8 * (gen() % 100) / 100.0);
        const auto c = confusion(p, y);
        const auto o = oracle::brute_confusion(p, y);
        REQUIRE(c == Confusion{o.tp, o.fp, o.tn, o.fn});
        std::size_t correct = 0, pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            correct += p[i] == y[i];
            pos += y[i];
        }
        CHECK(accuracy(c) == static_cast<double>(correct) / n);
        CHECK(nir(y) == std::max(pos, n - pos) / static_cast<double>(n));
        if (pos == 0 || pos == n) {
            CHECK_THROWS_AS(balanced_accuracy(c), UndefinedMetricError);
            continue;
        }
        const double sens = static_cast<double>(o.tp) / (o.tp + o.fn);
        const double spec = static_cast<double>(o.tn) / (o.tn + o.fp);
        CHECK(balanced_accuracy(c) == (sens + spec) / 2);
    }
}

TEST_CASE("balanced accuracy is invariant under polarity flip") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 200; ++trial) {
        auto p = random_bits(50, gen);
        auto y = random_bits(50, gen);
        y[0] = 0;
        y[1] = 1;
        Bits pf(p), yf(y);
        for (auto& x : pf) x ^= 1;
        for (auto& x : yf) x ^= 1;
        CHECK(balanced_accuracy(confusion(p, y)) == doctest::Approx(balanced_accuracy(confusion(pf, yf))).epsilon(1e-15));
    }
}

TEST_CASE("majority-constant predictor accuracy equals NIR") {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 200; ++trial) {
        const auto y = random_bits(1 + gen() % 100, gen, 0.3);
        const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
        const Bits p(y.size(), pos * 2 >= y.size() ? 1 : 0);
        CHECK(accuracy(confusion(p, y)) == nir(y));
    }
}

TEST_CASE("bootstrap intervals") {
    const RngStream rng(1, StreamKind::bootstrap);
    Bits y(40);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0;

    const auto perfect = single_feature(y, y);
    const auto ci = bootstrap_ci(perfect, 0, Metric::balanced_accuracy, rng);
    REQUIRE(ci);
    CHECK(ci->low == 1.0);
    CHECK(ci->high == 1.0);

    const auto all_pos = single_feature(Bits(y.size(), 1), y);
    const auto ci_pos = bootstrap_ci(all_pos, 0, Metric::balanced_accuracy, rng);
    REQUIRE(ci_pos);
    CHECK(ci_pos->low == 0.5);
    CHECK(ci_pos->high == 0.5);

    CHECK_THROWS_AS(bootstrap_ci(single_feature(y, Bits(y.size(), 1)), 0, Metric::balanced_accuracy, rng),
                    UndefinedMetricError);

    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto labels = random_bits(30, gen);
        labels[0] = 0;
        labels[1] = 1;
        const auto set = single_feature(random_bits(30, gen), labels);
        const auto c = confusion(set.predicted(0), set.actual(0));
        for (auto metric : {Metric::balanced_accuracy, Metric::accuracy}) {
            const auto iv = bootstrap_ci(set, 0, metric, rng.derive(trial), 200);
            REQUIRE(iv);
            const double est = metric == Metric::accuracy ? accuracy(c) : balanced_accuracy(c);
            CHECK(iv->low >= 0.0);
            CHECK(iv->high <= 1.0);
            CHECK(iv->low <= est);
            CHECK(est <= iv->high);
        }
    }
}

TEST_CASE("bootstrap is identical in serial and parallel execution and deterministic") {
    std::mt19937_64 gen(9);
    const auto set = single_feature(random_bits(120, gen), random_bits(120, gen));
    const RngStream rng(3, StreamKind::bootstrap);
    for (auto metric : {Metric::balanced_accuracy, Metric::accuracy}) {
        const auto s = bootstrap_samples(set, 0, metric, rng, 500, Execution::serial);
        const auto p = bootstrap_samples(set, 0, metric, rng, 500, Execution::parallel);
        CHECK(s.values == p.values);
        CHECK(s.attempts == p.attempts);
        CHECK(bootstrap_samples(set, 0, metric, rng, 500).values == s.values);
    }
}

TEST_CASE("bootstrap rejection budget") {
    Bits y(20, 0);
    y[0] = 1;
    const auto set = single_feature(y, y);
    const auto s = bootstrap_samples(set, 0, Metric::balanced_accuracy, RngStream(1, StreamKind::bootstrap), 1000);
    CHECK(s.attempts <= 10000);
    if (s.exhausted) {
        CHECK_FALSE(bootstrap_ci(set, 0, Metric::balanced_accuracy, RngStream(1, StreamKind::bootstrap)));
    }
    CHECK(s.attempts >= 1000);
}

TEST_CASE("quantile interpolates") {
    CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(quantile({4, 1, 3, 2}, 1.0) == 4.0);
    CHECK_THROWS(quantile({}, 0.5));
}

TEST_CASE("chance tests") {
    Bits y(60);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 4 == 0;
    const RngStream rng(4, StreamKind::bootstrap);
    const auto perfect = p_value_vs_chance(single_feature(y, y), 0, rng);
    CHECK(perfect.accuracy_vs_nir <= 1.0 / 1000);
    REQUIRE(perfect.balanced_vs_half);
    CHECK(*perfect.balanced_vs_half <= 1.0 / 1000);

    const auto majority = p_value_vs_chance(single_feature(Bits(y.size(), 0), y), 0, rng);
    REQUIRE(majority.balanced_vs_half);
    CHECK(*majority.balanced_vs_half == 1.0);
    CHECK(majority.accuracy_vs_nir > 0.4);
}

TEST_CASE("planted probe beats chance and a label-shuffled control does not") {
    auto spec = oracle::small_spec(21);
    const auto data = oracle::pooled_from(synthesize(spec));
    ArchitectureConfig arch;
    arch.n_layers = data.n_layers;
    arch.input_dim = data.dim;
    arch.layer_mode = LayerMode::fixed(spec.features[3].planted_layer);
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    const auto trained = train(data, arch, cfg);
    auto set = predict(trained.params, arch, data.test);
    const RngStream rng(5, StreamKind::bootstrap);
    const auto real = p_value_vs_chance(set, 3, rng);
    REQUIRE(real.balanced_vs_half);
    CHECK(*real.balanced_vs_half < 0.05);
    const auto c = confusion(set.predicted(3), set.actual(3));
    CHECK(balanced_accuracy(c) >= 0.9);

    std::vector<std::size_t> perm(set.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::mt19937_64 gen(17);
    std::shuffle(perm.begin(), perm.end(), gen);
    auto shuffled = set;
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t f = 0; f < set.n_features(); ++f) shuffled.labels(i, f) = set.labels(perm[i], f);
    const auto control = p_value_vs_chance(shuffled, 3, rng);
    REQUIRE(control.balanced_vs_half);
    CHECK(*control.balanced_vs_half > 0.05);
}

TEST_CASE("bootstrap CI coverage for accuracy") {
    std::mt19937_64 gen(31);
    std::size_t covered = 0;
    const std::size_t datasets = 200;
    for (std::size_t d = 0; d < datasets; ++d) {
        const auto y = random_bits(200, gen);
        const auto correct = random_bits(200, gen, 0.75);
        Bits p(200);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = correct[i] ? y[i] : 1 - y[i];
        const auto iv = bootstrap_ci(single_feature(p, y), 0, Metric::accuracy, RngStream(d, StreamKind::bootstrap));
        REQUIRE(iv);
        covered += iv->low <= 0.75 && 0.75 <= iv->high;
    }
    CHECK(static_cast<double>(covered) / datasets >= 0.9);
}

TEST_CASE("report covers exactly the included features") {
    std::mt19937_64 gen(12);
    PredictionSet set;
    set.probabilities = oracle::random_matrix(80, kNumFeatures, gen, 0.0, 1.0);
    set.labels = Matrix(80, kNumFeatures);
    for (std::size_t i = 0; i < 80; ++i) {
        set.record_ids.push_back(std::to_string(i));
        for (std::size_t f = 0; f < kNumFeatures; ++f) set.labels(i, f) = gen() % 2;
    }
    EvalOptions opt;
    opt.n_boot = 200;
    const auto ood = compute_report(set, default_ood_exclusions(), opt, "ood_test");
    std::vector<std::string> names;
    for (const auto& f : ood.features) names.push_back(f.feature);
    CHECK(names == std::vector<std::string>{"strained", "slow_rate", "distortions"});
    CHECK(ood.excluded_features == std::vector<std::string>{"irregular_articulatory_breakdowns", "rapid_rate"});
    REQUIRE(ood.macro_balanced_accuracy);
    double sum = 0;
    for (const auto& f : ood.features) sum += *f.balanced_accuracy;
    CHECK(*ood.macro_balanced_accuracy == doctest::Approx(sum / 3).epsilon(1e-15));

    const auto full = compute_report(set, {}, opt, "test");
    CHECK(full.features.size() == 5);
    CHECK(full.excluded_features.empty());
    CHECK(full.find("rapid_rate") != nullptr);
    CHECK(full.find("nope") == nullptr);

    for (std::size_t i = 0; i < 80; ++i) set.labels(i, 1) = 0;
    const auto undefined = compute_report(set, {}, opt, "test");
    CHECK(undefined.undefined_features == std::vector<std::string>{"irregular_articulatory_breakdowns"});
    const auto* iab = undefined.find("irregular_articulatory_breakdowns");
    REQUIRE(iab);
    CHECK(iab->status == "single_class");
    CHECK_FALSE(iab->balanced_accuracy);
    sum = 0;
    for (const auto& f : undefined.features)
        if (f.balanced_accuracy) sum += *f.balanced_accuracy;
    CHECK(*undefined.macro_balanced_accuracy == doctest::Approx(sum / 4).epsilon(1e-15));

    CHECK(report_from_json(to_json(ood)) == ood);
    CHECK(report_from_json(to_json(undefined)) == undefined);
    CHECK(to_json(ood).dump() == to_json(report_from_json(to_json(ood))).dump());
}

TEST_CASE("evaluate is deterministic") {
    const auto data = oracle::pooled_from(synthesize(oracle::small_spec(3)));
    ArchitectureConfig arch;
    arch.n_layers = data.n_layers;
    arch.input_dim = data.dim;
    arch.layer_mode = LayerMode::weighted_sum();
    RngStream r(1, StreamKind::init);
    const auto p = build(arch, r);
    EvalOptions opt;
    opt.n_boot = 100;
    const auto a = evaluate(p, arch, data.test, {}, opt, "test");
    const auto b = evaluate(p, arch, data.test, {}, opt, "test");
    CHECK(a == b);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK_THROWS(evaluate(p, arch, std::vector<PooledExample>{}, {}, opt, "test"));
}
