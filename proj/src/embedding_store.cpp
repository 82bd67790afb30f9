#include "lprobe/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "lprobe/errors.hpp"
#include "lprobe/hash.hpp"

namespace lprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::optional<std::size_t> parse_feature(std::string_view name) {
    for (std::size_t i = 0; i < kNumFeatures; ++i)
        if (name == kFeatureNames[i] || name == kFeatureAbbrev[i]) return i;
    return std::nullopt;
}

std::string_view to_string(Task t) noexcept { return t == Task::AMR ? "AMR" : "SMR"; }

std::string_view to_string(Split s) noexcept {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::ood_test: return "ood_test";
    }
    return "?";
}

std::optional<Task> parse_task(std::string_view s) {
    if (s == "AMR") return Task::AMR;
    if (s == "SMR") return Task::SMR;
    return std::nullopt;
}

std::optional<Split> parse_split(std::string_view s) {
    for (auto sp : {Split::train, Split::val, Split::test, Split::ood_test})
        if (s == to_string(sp)) return sp;
    return std::nullopt;
}

// --- binary records ---------------------------------------------------------

namespace {

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::span<const std::byte> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

constexpr char kMagic[4] = {'L', 'P', 'S', '1'};

} // namespace

void check_record(const LayerStackRecord& r) {
    if (r.n_layers == 0 || r.dim == 0 || r.n_frames == 0)
        throw ShapeError("record '" + r.record_id + "': n_layers, dim and n_frames must be >= 1");
    const std::size_t expected = std::size_t{r.n_layers} * r.n_frames * r.dim;
    if (r.data.size() != expected)
        throw ShapeError("record '" + r.record_id + "': data length " +
                         std::to_string(r.data.size()) + " != n_layers*n_frames*dim = " +
                         std::to_string(expected));
    for (std::size_t i = 0; i < r.data.size(); ++i)
        if (!std::isfinite(r.data[i]))
            throw NonFiniteError("record '" + r.record_id + "': non-finite value at index " +
                                 std::to_string(i));
}

std::vector<std::byte> encode_record(const LayerStackRecord& r) {
    check_record(r);
    std::vector<std::byte> out;
    out.reserve(kEmbeddingHeaderBytes + r.data.size() * 4);
    for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
    put_u32(out, kEmbeddingVersion);
    put_u32(out, r.n_layers);
    put_u32(out, r.dim);
    put_u32(out, r.n_frames);
    out.resize(kEmbeddingHeaderBytes, std::byte{0});
    for (float f : r.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

LayerStackRecord decode_record(std::span<const std::byte> b) {
    if (b.size() < kEmbeddingHeaderBytes)
        throw FormatError("embedding file truncated: header needs " +
                          std::to_string(kEmbeddingHeaderBytes) + " bytes, got " +
                          std::to_string(b.size()));
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("embedding file: bad magic");
    const std::uint32_t version = get_u32(b, 4);
    if (version != kEmbeddingVersion)
        throw FormatError("embedding file: unsupported version " + std::to_string(version));
    LayerStackRecord r;
    r.n_layers = get_u32(b, 8);
    r.dim = get_u32(b, 12);
    r.n_frames = get_u32(b, 16);
    for (std::size_t i = 20; i < kEmbeddingHeaderBytes; ++i)
        if (b[i] != std::byte{0})
            throw FormatError("embedding file: reserved header byte " + std::to_string(i) +
                              " is non-zero");
    if (r.n_layers == 0 || r.dim == 0 || r.n_frames == 0)
        throw FormatError("embedding file: zero dimension in header (n_layers=" +
                          std::to_string(r.n_layers) + ", dim=" + std::to_string(r.dim) +
                          ", n_frames=" + std::to_string(r.n_frames) + ")");
    const std::uint64_t count = std::uint64_t{r.n_layers} * r.dim * r.n_frames;
    const std::uint64_t expected = kEmbeddingHeaderBytes + count * 4;
    if (b.size() < expected)
        throw FormatError("embedding file truncated: expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(b.size()));
    if (b.size() > expected)
        throw FormatError("embedding file has trailing bytes: expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(b.size()));
    r.data.resize(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        const float f = std::bit_cast<float>(get_u32(b, kEmbeddingHeaderBytes + 4 * i));
        if (!std::isfinite(f))
            throw NonFiniteError("embedding file: non-finite value at index " + std::to_string(i));
        r.data[i] = f;
    }
    return r;
}

void write_record(const LayerStackRecord& record, const fs::path& path) {
    const auto bytes = encode_record(record);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<std::byte> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<std::byte> bytes(size);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw std::runtime_error("read failed for '" + path.string() + "'");
    return bytes;
}

LayerStackRecord read_record(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_record(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// --- manifest ---------------------------------------------------------------

fs::path DatasetManifest::resolve(const ManifestEntry& e) const {
    fs::path p(e.file_path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::vector<const ManifestEntry*> DatasetManifest::entries(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : records)
        if (e.split == split) out.push_back(&e);
    return out;
}

std::string manifest_to_json(const DatasetManifest& m, int indent) {
    ojson doc;
    doc["feature_names"] = m.feature_names;
    ojson recs = ojson::array();
    for (const auto& e : m.records) {
        ojson labels;
        for (std::size_t i = 0; i < kNumFeatures; ++i)
            labels[std::string(kFeatureNames[i])] = e.labels[i];
        recs.push_back(ojson{{"record_id", e.record_id},
                             {"speaker_id", e.speaker_id},
                             {"task", to_string(e.task)},
                             {"file_path", e.file_path},
                             {"labels", labels},
                             {"split", to_string(e.split)}});
    }
    doc["records"] = std::move(recs);
    return doc.dump(indent);
}

DatasetManifest manifest_from_json(std::string_view text, fs::path base_dir) {
    ojson doc;
    try {
        doc = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
    }
    DatasetManifest m;
    m.base_dir = std::move(base_dir);
    try {
        m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
        for (const auto& r : doc.at("records")) {
            ManifestEntry e;
            e.record_id = r.at("record_id").get<std::string>();
            e.speaker_id = r.at("speaker_id").get<std::string>();
            const auto task = parse_task(r.at("task").get<std::string>());
            if (!task) throw FormatError("manifest: record '" + e.record_id + "' has unknown task");
            e.task = *task;
            e.file_path = r.at("file_path").get<std::string>();
            const auto split = parse_split(r.at("split").get<std::string>());
            if (!split)
                throw FormatError("manifest: record '" + e.record_id + "' has unknown split");
            e.split = *split;
            const auto& labels = r.at("labels");
            for (std::size_t i = 0; i < kNumFeatures; ++i)
                e.labels[i] = labels.at(std::string(kFeatureNames[i])).get<bool>();
            m.records.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: schema error: ") + e.what());
    }
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return manifest_from_json(text, fs::absolute(path).parent_path());
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << manifest_to_json(manifest) << '\n';
}

std::vector<Violation> validate_manifest(const DatasetManifest& m, bool check_files) {
    std::vector<Violation> out;

    const std::vector<std::string> canonical(kFeatureNames.begin(), kFeatureNames.end());
    if (m.feature_names != canonical)
        out.push_back({"", "feature_names", "feature_names must be the 5 canonical names in order"});

    std::unordered_map<std::string, std::size_t> seen_ids;
    for (const auto& e : m.records) {
        if (auto [it, fresh] = seen_ids.emplace(e.record_id, 1); !fresh)
            out.push_back({e.record_id, "unique_record_id", "duplicate record_id"});
        if (e.labels[Feature::rapid_rate] && e.labels[Feature::slow_rate])
            out.push_back({e.record_id, "rate_exclusive", "rapid_rate and slow_rate both set"});
    }

    // One violation per leaking speaker, naming the first record outside its home split.
    std::map<std::string, Split> home;
    std::set<std::string> reported;
    for (const auto& e : m.records) {
        auto [it, fresh] = home.emplace(e.speaker_id, e.split);
        if (!fresh && it->second != e.split && reported.insert(e.speaker_id).second)
            out.push_back({e.record_id, "speaker_disjoint",
                           "speaker '" + e.speaker_id + "' appears in both " +
                               std::string(to_string(it->second)) + " and " +
                               std::string(to_string(e.split))});
    }

    if (!check_files) return out;

    struct FileCheck {
        std::optional<Violation> violation;
        std::uint32_t n_layers = 0, dim = 0;
    };
    std::vector<FileCheck> checks(m.records.size());
    const auto n = static_cast<std::int64_t>(m.records.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t ii = 0; ii < n; ++ii) {
        const auto& e = m.records[static_cast<std::size_t>(ii)];
        auto& c = checks[static_cast<std::size_t>(ii)];
        const auto path = m.resolve(e);
        std::error_code ec;
        if (!fs::exists(path, ec)) {
            c.violation = Violation{e.record_id, "file_exists", "missing file " + path.string()};
            continue;
        }
        try {
            const auto rec = read_record(path);
            c.n_layers = rec.n_layers;
            c.dim = rec.dim;
        } catch (const std::exception& ex) {
            c.violation = Violation{e.record_id, "file_valid", ex.what()};
        }
    }
    std::optional<std::pair<std::uint32_t, std::uint32_t>> dims;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        if (checks[i].violation) {
            out.push_back(*checks[i].violation);
            continue;
        }
        const std::pair d{checks[i].n_layers, checks[i].dim};
        if (!dims)
            dims = d;
        else if (*dims != d)
            out.push_back({m.records[i].record_id, "dims_consistent",
                           "n_layers/dim " + std::to_string(d.first) + "/" +
                               std::to_string(d.second) + " differ from dataset " +
                               std::to_string(dims->first) + "/" + std::to_string(dims->second)});
    }
    return out;
}

// --- split iteration --------------------------------------------------------

SplitRange::SplitRange(const DatasetManifest& manifest, Split split)
    : manifest_(&manifest), entries_(manifest.entries(split)) {}

SplitRange::iterator::iterator(const SplitRange* owner, std::size_t pos) : owner_(owner), pos_(pos) {
    load();
}

SplitRange::iterator& SplitRange::iterator::operator++() {
    ++pos_;
    load();
    return *this;
}

void SplitRange::iterator::load() {
    current_.reset();
    if (!owner_ || pos_ >= owner_->entries_.size()) return;
    const ManifestEntry& e = *owner_->entries_[pos_];
    SplitItem item{read_record(owner_->manifest_->resolve(e)), e.labels};
    item.record.record_id = e.record_id;
    item.record.speaker_id = e.speaker_id;
    item.record.task = e.task;
    current_ = std::move(item);
}

} // namespace lprobe
