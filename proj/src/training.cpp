#include "lprobe/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lprobe/errors.hpp"
#include "lprobe/evaluation.hpp"
#include "lprobe/numerics.hpp"

namespace lprobe {

using ojson = nlohmann::ordered_json;

void validate(const TrainConfig& c) {
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
        throw ConfigError("train: learning_rate must be finite and >= 0");
    if (!(c.weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) throw ConfigError("train: dropout_p must lie in [0, 1)");
    if (c.epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (c.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw ConfigError("train: betas must lie in [0, 1)");
    if (!(c.epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
}

ojson to_json(const TrainConfig& c) {
    return ojson{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
                 {"dropout_p", c.dropout_p},         {"epochs", c.epochs},
                 {"batch_size", c.batch_size},       {"seed", c.seed},
                 {"beta1", c.beta1},                 {"beta2", c.beta2},
                 {"epsilon", c.epsilon}};
}

TrainConfig train_config_from_json(const ojson& j) {
    TrainConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.dropout_p = j.value("dropout_p", c.dropout_p);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

OptimizerState OptimizerState::for_params(const ProbeParams& params) {
    return {zeros_like(params), zeros_like(params), 0};
}

void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t t, const TrainConfig& c) {
    if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
        throw ShapeError("adamw: parameter/gradient/state shapes differ");
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] = theta[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon) -
                   c.learning_rate * c.weight_decay * theta[i];
    }
}

void adamw_step(ProbeParams& params, const ProbeParams& grads, OptimizerState& state,
                const TrainConfig& config) {
    std::vector<std::span<double>> p, m, v;
    std::vector<std::span<const double>> g;
    params.for_each_tensor([&](std::span<double> t) { p.push_back(t); });
    grads.for_each_tensor([&](std::span<const double> t) { g.push_back(t); });
    state.m.for_each_tensor([&](std::span<double> t) { m.push_back(t); });
    state.v.for_each_tensor([&](std::span<double> t) { v.push_back(t); });
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
        throw ShapeError("adamw: gradient structure does not match parameters");
    for (const auto& t : g)
        if (!all_finite(t)) throw NonFiniteError("adamw: non-finite gradient");
    ++state.t;
    for (std::size_t i = 0; i < p.size(); ++i) adamw_update(p[i], g[i], m[i], v[i], state.t, config);
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n_examples, std::size_t batch_size,
                                                     std::size_t epoch, std::uint64_t seed) {
    if (batch_size == 0) throw ConfigError("batch_iterator: batch_size must be >= 1");
    std::vector<std::size_t> order(n_examples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream rng = RngStream(seed, StreamKind::shuffle).derive(epoch);
    rng.shuffle(std::span(order));
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n_examples; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, n_examples);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

ojson to_json(const EpochLog& log) {
    ojson val = ojson::array();
    for (const auto& v : log.val_balanced_accuracy) val.push_back(v ? ojson(*v) : ojson(nullptr));
    return ojson{{"epoch", log.epoch},
                 {"train_loss", log.train_loss},
                 {"val_balanced_accuracy", val},
                 {"layer_weights", log.layer_weights},
                 {"seconds", log.seconds}};
}

void write_epoch_logs(const std::filesystem::path& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    for (const auto& l : logs) out << to_json(l).dump() << '\n';
}

namespace {

std::vector<std::optional<double>> per_feature_balanced_accuracy(const ProbeParams& params,
                                                                 const ArchitectureConfig& arch,
                                                                 const std::vector<PooledExample>& val) {
    std::vector<std::optional<double>> out(arch.n_features);
    if (val.empty()) return out;
    const auto set = predict(params, arch, val);
    for (std::size_t f = 0; f < arch.n_features; ++f) {
        const Confusion c = confusion(set.predicted(f), set.actual(f));
        if (c.tp + c.fn > 0 && c.tn + c.fp > 0) out[f] = balanced_accuracy(c);
    }
    return out;
}

} // namespace

TrainResult train(const PooledDataset& data, const ArchitectureConfig& arch, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
    validate(arch);
    validate(cfg);
    if (arch.dropout_p != cfg.dropout_p)
        throw ConfigError("train: architecture dropout_p differs from training dropout_p");
    if (data.train.empty()) throw std::invalid_argument("train: training split is empty");
    if (data.n_layers != arch.n_layers || data.dim != arch.input_dim)
        throw ShapeError("train: dataset is " + std::to_string(data.n_layers) + "x" +
                         std::to_string(data.dim) + " but architecture expects " +
                         std::to_string(arch.n_layers) + "x" + std::to_string(arch.input_dim));

    RngStream init_rng(cfg.seed, StreamKind::init);
    TrainResult result{build(arch, init_rng), {}};
    OptimizerState state = OptimizerState::for_params(result.params);
    const RngStream dropout_base(cfg.seed, StreamKind::dropout);

    std::size_t step = 0;
    std::vector<const PooledExample*> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        const auto batches = batch_iterator(data.train.size(), cfg.batch_size, epoch, cfg.seed);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            batch.clear();
            for (auto idx : batches[b]) batch.push_back(&data.train[idx]);
            RngStream drop = dropout_base.derive(step);
            const auto fp = forward(batch, result.params, arch, Mode::train, drop);
            const auto bce = sigmoid_bce_with_logits(fp.logits, batch_targets(batch, arch.n_features));
            if (!std::isfinite(bce.loss))
                throw NonFiniteError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b));
            const auto grads = backward(batch, result.params, arch, bce.dlogits, fp.trace);
            adamw_step(result.params, grads, state, cfg);
            loss_sum += bce.loss * static_cast<double>(batch.size());
            loss_count += batch.size();
            if (hooks.on_step) hooks.on_step(step, result.params);
            ++step;
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(loss_count);
        log.val_balanced_accuracy = per_feature_balanced_accuracy(result.params, arch, data.val);
        log.layer_weights = layer_weights(result.params, arch);
        log.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.logs.push_back(std::move(log));
    }
    return result;
}

TrainResult train(const DatasetManifest& manifest, const ArchitectureConfig& arch,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
    const auto violations = validate_manifest(manifest);
    if (!violations.empty())
        throw ConfigError("train: manifest has " + std::to_string(violations.size()) +
                          " violation(s); first: " + violations.front().record_id + ": " +
                          violations.front().rule + " (" + violations.front().detail + ")");
    return train(load_pooled(manifest), arch, cfg, hooks);
}

} // namespace lprobe
