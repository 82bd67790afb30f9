#include "lprobe/probe_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lprobe/errors.hpp"

namespace lprobe {

using ojson = nlohmann::ordered_json;

std::string LayerMode::label() const {
    return is_weighted_sum() ? std::string("weighted_sum") : std::to_string(index);
}

std::optional<LayerMode> LayerMode::parse(std::string_view s) {
    if (s == "weighted_sum" || s == "ws") return weighted_sum();
    if (s.empty()) return std::nullopt;
    std::size_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return fixed(v);
}

void validate(const ArchitectureConfig& c) {
    if (c.n_layers == 0) throw ConfigError("architecture: n_layers must be >= 1");
    if (c.input_dim == 0) throw ConfigError("architecture: input_dim must be >= 1");
    if (c.n_features == 0) throw ConfigError("architecture: n_features must be >= 1");
    if (!c.layer_mode.is_weighted_sum() && c.layer_mode.index >= c.n_layers)
        throw ConfigError("architecture: layer index " + std::to_string(c.layer_mode.index) +
                          " out of range for " + std::to_string(c.n_layers) + " layers");
    if (c.shared_dense_bottleneck && *c.shared_dense_bottleneck == 0)
        throw ConfigError("architecture: shared_dense_bottleneck must be >= 1");
    if (c.classifier_bottleneck && *c.classifier_bottleneck == 0)
        throw ConfigError("architecture: classifier_bottleneck must be >= 1");
    if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0))
        throw ConfigError("architecture: dropout_p must lie in [0, 1)");
}

ArchitectureConfig normalized(ArchitectureConfig c) {
    if (!c.shared_dense || c.shared_dense_bottleneck == c.input_dim) c.shared_dense_bottleneck.reset();
    if (c.classifier_bottleneck == c.input_dim) c.classifier_bottleneck.reset();
    if (c.layer_mode.is_weighted_sum()) c.layer_mode.index = 0;
    return c;
}

ojson to_json(const ArchitectureConfig& c) {
    ojson j;
    j["head_mode"] = c.head_mode == HeadMode::single ? "single" : "multi";
    j["shared_dense"] = c.shared_dense;
    j["shared_dense_bottleneck"] =
        c.shared_dense_bottleneck ? ojson(*c.shared_dense_bottleneck) : ojson(nullptr);
    j["classifier_bottleneck"] =
        c.classifier_bottleneck ? ojson(*c.classifier_bottleneck) : ojson(nullptr);
    j["layer_mode"] = c.layer_mode.is_weighted_sum() ? "weighted_sum" : "fixed";
    j["layer_index"] = c.layer_mode.index;
    j["n_layers"] = c.n_layers;
    j["input_dim"] = c.input_dim;
    j["n_features"] = c.n_features;
    j["dropout_p"] = c.dropout_p;
    return j;
}

namespace {

std::optional<std::size_t> optional_width(const ojson& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    const auto& v = j.at(key);
    if (v.is_string() && (v.get<std::string>() == "none" || v.get<std::string>() == "None"))
        return std::nullopt;
    return v.get<std::size_t>();
}

} // namespace

ArchitectureConfig architecture_from_json(const ojson& j) {
    ArchitectureConfig c;
    try {
        if (j.contains("head_mode")) {
            const auto m = j.at("head_mode").get<std::string>();
            if (m == "single")
                c.head_mode = HeadMode::single;
            else if (m == "multi")
                c.head_mode = HeadMode::multi;
            else
                throw ConfigError("architecture: head_mode must be 'single' or 'multi'");
        }
        if (j.contains("shared_dense")) c.shared_dense = j.at("shared_dense").get<bool>();
        c.shared_dense_bottleneck = optional_width(j, "shared_dense_bottleneck");
        c.classifier_bottleneck = optional_width(j, "classifier_bottleneck");
        if (j.contains("layer_mode")) {
            const auto m = j.at("layer_mode").get<std::string>();
            if (m == "weighted_sum")
                c.layer_mode = LayerMode::weighted_sum();
            else if (m == "fixed")
                c.layer_mode = LayerMode::fixed(j.value("layer_index", std::size_t{0}));
            else
                throw ConfigError("architecture: layer_mode must be 'fixed' or 'weighted_sum'");
        } else if (j.contains("layer_index")) {
            c.layer_mode = LayerMode::fixed(j.at("layer_index").get<std::size_t>());
        }
        if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<std::size_t>();
        if (j.contains("input_dim")) c.input_dim = j.at("input_dim").get<std::size_t>();
        if (j.contains("n_features")) c.n_features = j.at("n_features").get<std::size_t>();
        if (j.contains("dropout_p")) c.dropout_p = j.at("dropout_p").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("architecture: ") + e.what());
    }
    return c;
}

std::size_t ProbeParams::scalar_count() const noexcept {
    std::size_t n = 0;
    for_each_tensor([&](std::span<const double> t) { n += t.size(); });
    return n;
}

std::vector<double> flatten(const ProbeParams& p) {
    std::vector<double> flat;
    flat.reserve(p.scalar_count());
    p.for_each_tensor([&](std::span<const double> t) { flat.insert(flat.end(), t.begin(), t.end()); });
    return flat;
}

void unflatten(std::span<const double> flat, ProbeParams& p) {
    if (flat.size() != p.scalar_count()) throw ShapeError("unflatten: length mismatch");
    std::size_t at = 0;
    p.for_each_tensor([&](std::span<double> t) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), t.size(), t.begin());
        at += t.size();
    });
}

ProbeParams zeros_like(const ProbeParams& p) {
    ProbeParams z = p;
    z.for_each_tensor([](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
}

namespace {

DenseParams make_dense(std::size_t in, std::size_t out, RngStream& rng) {
    DenseParams d{Matrix(in, out), std::vector<double>(out, 0.0)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : d.weight.values()) w = (2.0 * rng.uniform() - 1.0) * bound;
    return d;
}

} // namespace

ProbeParams build(const ArchitectureConfig& config, RngStream& rng) {
    validate(config);
    ProbeParams p;
    if (config.layer_mode.is_weighted_sum()) p.layer_logits.assign(config.n_layers, 0.0);
    if (config.shared_dense) p.shared = make_dense(config.input_dim, config.shared_width(), rng);
    const std::size_t d = config.head_input_width();
    const std::size_t h = config.hidden_width();
    const std::size_t out = config.head_mode == HeadMode::single ? config.n_features : 1;
    for (std::size_t i = 0; i < config.n_heads(); ++i) {
        HeadParams head;
        head.hidden = make_dense(d, h, rng);
        head.projection = make_dense(h, out, rng);
        p.heads.push_back(std::move(head));
    }
    return p;
}

std::size_t count_params(const ArchitectureConfig& c) {
    const std::size_t d = c.head_input_width();
    const std::size_t h = c.hidden_width();
    std::size_t n = 0;
    if (c.layer_mode.is_weighted_sum()) n += c.n_layers;
    if (c.shared_dense) n += c.input_dim * c.shared_width() + c.shared_width();
    if (c.head_mode == HeadMode::single)
        n += (d * h + h) + (h * c.n_features + c.n_features);
    else
        n += c.n_features * ((d * h + h) + (h + 1));
    return n;
}

PooledExample pool_record(const LayerStackRecord& record, const FeatureLabelSet& labels) {
    check_record(record);
    PooledExample ex{record.record_id, Matrix(record.n_layers, record.dim), labels};
    for (std::size_t l = 0; l < record.n_layers; ++l) {
        const auto pooled = mean_pool_time(record.layer(l), record.n_frames, record.dim);
        std::copy(pooled.begin(), pooled.end(), ex.layers.row(l).begin());
    }
    return ex;
}

std::vector<double> layer_weights(const ProbeParams& params, const ArchitectureConfig& config) {
    if (!config.layer_mode.is_weighted_sum()) return {};
    return softmax(params.layer_logits);
}

namespace {

void check_example(const PooledExample& ex, const ArchitectureConfig& c) {
    if (ex.layers.rows() != c.n_layers || ex.layers.cols() != c.input_dim)
        throw ShapeError("example '" + ex.record_id + "' is " + std::to_string(ex.layers.rows()) +
                         "x" + std::to_string(ex.layers.cols()) + ", model expects " +
                         std::to_string(c.n_layers) + "x" + std::to_string(c.input_dim));
}

void combine_into(const PooledExample& ex, std::span<const double> weights,
                  const ArchitectureConfig& c, std::span<double> out) {
    if (!c.layer_mode.is_weighted_sum()) {
        const auto r = ex.layers.row(c.layer_mode.index);
        std::copy(r.begin(), r.end(), out.begin());
        return;
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto r = ex.layers.row(l);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[l] * r[j];
    }
}

DenseTrace dense_relu_dropout(Matrix input, const DenseParams& p, double dropout_p, Mode mode,
                              RngStream& rng) {
    DenseTrace t;
    t.pre = linear_forward(input, p.weight, p.bias);
    t.out = dropout(relu(t.pre), dropout_p, mode, rng);
    t.input = std::move(input);
    return t;
}

// Gradient through dropout -> ReLU -> linear; accumulates weight grads into `g`.
Matrix dense_relu_dropout_backward(const DenseTrace& t, const DenseParams& p, const Matrix& dout,
                                   double dropout_p, DenseParams& g) {
    const Matrix dpre = relu_backward(t.pre, dropout_backward(dout, t.out.mask, dropout_p));
    LinearGrads lg = linear_backward(t.input, p.weight, dpre);
    g.weight = std::move(lg.dw);
    g.bias = std::move(lg.db);
    return std::move(lg.dx);
}

void check_params(const ProbeParams& p, const ArchitectureConfig& c) {
    if (c.layer_mode.is_weighted_sum() != !p.layer_logits.empty() ||
        (c.layer_mode.is_weighted_sum() && p.layer_logits.size() != c.n_layers) ||
        c.shared_dense != p.shared.has_value() || p.heads.size() != c.n_heads())
        throw ShapeError("params do not match architecture");
}

} // namespace

std::vector<double> combine_layers(const PooledExample& example, const ProbeParams& params,
                                   const ArchitectureConfig& config) {
    check_example(example, config);
    check_params(params, config);
    std::vector<double> out(config.input_dim);
    const auto w = layer_weights(params, config);
    combine_into(example, w, config, out);
    return out;
}

ForwardPass forward(Batch batch, const ProbeParams& params, const ArchitectureConfig& c, Mode mode,
                    RngStream& rng) {
    if (batch.empty()) throw ShapeError("forward: empty batch");
    check_params(params, c);
    const std::size_t n = batch.size();
    ForwardPass fp;
    fp.trace.batch_size = n;
    fp.trace.layer_weights = layer_weights(params, c);
    fp.trace.combined = Matrix(n, c.input_dim);
    for (std::size_t i = 0; i < n; ++i) {
        check_example(*batch[i], c);
        combine_into(*batch[i], fp.trace.layer_weights, c, fp.trace.combined.row(i));
    }

    const Matrix* head_in = &fp.trace.combined;
    if (c.shared_dense) {
        fp.trace.shared = dense_relu_dropout(fp.trace.combined, *params.shared, c.dropout_p, mode, rng);
        head_in = &fp.trace.shared->out.y;
    }

    fp.logits = Matrix(n, c.n_features);
    if (c.head_mode == HeadMode::single) {
        const auto& head = params.heads[0];
        fp.trace.hidden.push_back(dense_relu_dropout(*head_in, head.hidden, c.dropout_p, mode, rng));
        fp.logits = linear_forward(fp.trace.hidden[0].out.y, head.projection.weight,
                                   head.projection.bias);
    } else {
        for (std::size_t f = 0; f < c.n_features; ++f) {
            const auto& head = params.heads[f];
            fp.trace.hidden.push_back(
                dense_relu_dropout(*head_in, head.hidden, c.dropout_p, mode, rng));
            const Matrix col = linear_forward(fp.trace.hidden[f].out.y, head.projection.weight,
                                              head.projection.bias);
            for (std::size_t i = 0; i < n; ++i) fp.logits(i, f) = col(i, 0);
        }
    }
    return fp;
}

ProbeParams backward(Batch batch, const ProbeParams& params, const ArchitectureConfig& c,
                     const Matrix& dlogits, const ForwardTrace& trace) {
    const std::size_t n = batch.size();
    if (trace.batch_size == 0 || trace.batch_size != n || trace.hidden.size() != c.n_heads())
        throw std::logic_error("backward: no matching forward trace for this batch");
    if (dlogits.rows() != n || dlogits.cols() != c.n_features)
        throw ShapeError("backward: dlogits shape mismatch");
    check_params(params, c);

    ProbeParams g = zeros_like(params);
    const std::size_t d = c.head_input_width();
    Matrix dhead_in(n, d);

    if (c.head_mode == HeadMode::single) {
        const auto& head = params.heads[0];
        const auto& t = trace.hidden[0];
        LinearGrads pg = linear_backward(t.out.y, head.projection.weight, dlogits);
        g.heads[0].projection.weight = std::move(pg.dw);
        g.heads[0].projection.bias = std::move(pg.db);
        dhead_in = dense_relu_dropout_backward(t, head.hidden, pg.dx, c.dropout_p, g.heads[0].hidden);
    } else {
        for (std::size_t f = 0; f < c.n_features; ++f) {
            const auto& head = params.heads[f];
            const auto& t = trace.hidden[f];
            Matrix dcol(n, 1);
            for (std::size_t i = 0; i < n; ++i) dcol(i, 0) = dlogits(i, f);
            LinearGrads pg = linear_backward(t.out.y, head.projection.weight, dcol);
            g.heads[f].projection.weight = std::move(pg.dw);
            g.heads[f].projection.bias = std::move(pg.db);
            const Matrix dx =
                dense_relu_dropout_backward(t, head.hidden, pg.dx, c.dropout_p, g.heads[f].hidden);
            for (std::size_t k = 0; k < dx.size(); ++k) dhead_in.data()[k] += dx.data()[k];
        }
    }

    Matrix dcombined = c.shared_dense
                           ? dense_relu_dropout_backward(*trace.shared, *params.shared, dhead_in,
                                                         c.dropout_p, *g.shared)
                           : std::move(dhead_in);

    if (c.layer_mode.is_weighted_sum()) {
        // dL/dw_l = Σ_i <dcombined_i, row_l(i)>, then through the softmax Jacobian.
        const auto& w = trace.layer_weights;
        std::vector<double> dw(c.n_layers, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto dc = dcombined.row(i);
            for (std::size_t l = 0; l < c.n_layers; ++l) {
                const auto r = batch[i]->layers.row(l);
                double acc = 0.0;
                for (std::size_t j = 0; j < c.input_dim; ++j) acc += dc[j] * r[j];
                dw[l] += acc;
            }
        }
        double mean = 0.0;
        for (std::size_t l = 0; l < c.n_layers; ++l) mean += w[l] * dw[l];
        for (std::size_t l = 0; l < c.n_layers; ++l) g.layer_logits[l] = w[l] * (dw[l] - mean);
    }
    return g;
}

Matrix batch_targets(Batch batch, std::size_t n_features) {
    Matrix t(batch.size(), n_features);
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t f = 0; f < n_features; ++f) t(i, f) = batch[i]->labels[f] ? 1.0 : 0.0;
    return t;
}

// --- LPPM serialization -----------------------------------------------------

namespace {

constexpr char kParamsMagic[4] = {'L', 'P', 'P', 'M'};

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::span<const std::byte> b, std::size_t at, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
        v |= static_cast<std::uint64_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

} // namespace

std::vector<std::byte> encode_params(const ArchitectureConfig& config, const ProbeParams& params) {
    check_params(params, config);
    const std::string cfg = to_json(config).dump();
    std::vector<std::byte> out;
    for (char ch : kParamsMagic) out.push_back(static_cast<std::byte>(ch));
    put_u32(out, kParamsVersion);
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    for (char ch : cfg) out.push_back(static_cast<std::byte>(ch));
    params.for_each_tensor([&](std::span<const double> t) {
        for (double v : t) put_u64(out, std::bit_cast<std::uint64_t>(v));
    });
    return out;
}

std::pair<ArchitectureConfig, ProbeParams> decode_params(std::span<const std::byte> b) {
    if (b.size() < 12 || std::memcmp(b.data(), kParamsMagic, 4) != 0)
        throw FormatError("params file: bad magic");
    const auto version = static_cast<std::uint32_t>(get_le(b, 4, 4));
    if (version != kParamsVersion)
        throw FormatError("params file: unsupported version " + std::to_string(version));
    const auto len = static_cast<std::size_t>(get_le(b, 8, 4));
    if (b.size() < 12 + len) throw FormatError("params file truncated in config block");
    const std::string text(reinterpret_cast<const char*>(b.data() + 12), len);
    ArchitectureConfig config;
    try {
        config = architecture_from_json(ojson::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("params file: bad config block: ") + e.what());
    }
    validate(config);
    RngStream dummy(0, StreamKind::init);
    ProbeParams params = build(config, dummy);
    const std::size_t expected = 12 + len + 8 * params.scalar_count();
    if (b.size() != expected)
        throw FormatError("params file: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(b.size()));
    std::size_t at = 12 + len;
    params.for_each_tensor([&](std::span<double> t) {
        for (auto& v : t) {
            v = std::bit_cast<double>(get_le(b, at, 8));
            at += 8;
        }
    });
    return {config, std::move(params)};
}

void save_params(const std::filesystem::path& path, const ArchitectureConfig& config,
                 const ProbeParams& params) {
    const auto bytes = encode_params(config, params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::pair<ArchitectureConfig, ProbeParams> load_params(const std::filesystem::path& path) {
    return decode_params(read_file_bytes(path));
}

} // namespace lprobe
