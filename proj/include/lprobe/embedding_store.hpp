#pragma once

// On-disk interchange for layer-wise encoder embeddings.
//
// Embedding file (little-endian):
//   bytes  0..3   magic "LPS1"
//   bytes  4..19  u32 version (=1), n_layers, dim, n_frames
//   bytes 20..35  reserved, must be zero
//   bytes 36..    n_layers*n_frames*dim float32, layer-major, then frame, then dim
//
// Manifest: one JSON document with `feature_names` and `records`.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lprobe {

inline constexpr std::size_t kNumFeatures = 5;
inline constexpr std::size_t kEmbeddingHeaderBytes = 36;
inline constexpr std::uint32_t kEmbeddingVersion = 1;

enum class Feature : std::size_t {
    strained = 0,
    irregular_articulatory_breakdowns = 1,
    rapid_rate = 2,
    slow_rate = 3,
    distortions = 4,
};

/// Canonical output ordering of the five pathological features.
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames{
    "strained", "irregular_articulatory_breakdowns", "rapid_rate", "slow_rate", "distortions"};
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureAbbrev{"s", "iab", "rr", "sr",
                                                                           "d"};

/// Accepts canonical names and the short forms s/iab/rr/sr/d.
std::optional<std::size_t> parse_feature(std::string_view name);

enum class Task { AMR, SMR };
enum class Split { train, val, test, ood_test };

std::string_view to_string(Task t) noexcept;
std::string_view to_string(Split s) noexcept;
std::optional<Task> parse_task(std::string_view s);
std::optional<Split> parse_split(std::string_view s);

struct FeatureLabelSet {
    std::array<bool, kNumFeatures> values{};

    bool operator[](std::size_t i) const noexcept { return values[i]; }
    bool& operator[](std::size_t i) noexcept { return values[i]; }
    bool operator[](Feature f) const noexcept { return values[static_cast<std::size_t>(f)]; }
    bool& operator[](Feature f) noexcept { return values[static_cast<std::size_t>(f)]; }

    friend bool operator==(const FeatureLabelSet&, const FeatureLabelSet&) = default;
};

/// One recording's embeddings for every encoder layer.
struct LayerStackRecord {
    std::string record_id;
    std::string speaker_id;
    Task task = Task::AMR;
    std::uint32_t n_layers = 0;
    std::uint32_t dim = 0;
    std::uint32_t n_frames = 0;
    std::vector<float> data; // [n_layers][n_frames][dim]

    std::span<const float> layer(std::size_t l) const noexcept {
        const std::size_t stride = std::size_t{n_frames} * dim;
        return {data.data() + l * stride, stride};
    }

    friend bool operator==(const LayerStackRecord&, const LayerStackRecord&) = default;
};

/// Throws ShapeError / NonFiniteError when the record violates its invariants.
void check_record(const LayerStackRecord& record);

std::vector<std::byte> encode_record(const LayerStackRecord& record);
/// Validates magic, version, reserved bytes, exact payload size and finiteness.
/// Throws FormatError or NonFiniteError.
LayerStackRecord decode_record(std::span<const std::byte> bytes);

void write_record(const LayerStackRecord& record, const std::filesystem::path& path);
LayerStackRecord read_record(const std::filesystem::path& path);
std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

struct ManifestEntry {
    std::string record_id;
    std::string speaker_id;
    Task task = Task::AMR;
    std::string file_path; // relative paths resolve against the manifest directory
    FeatureLabelSet labels;
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<std::string> feature_names{kFeatureNames.begin(), kFeatureNames.end()};
    std::vector<ManifestEntry> records;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const ManifestEntry& e) const;
    std::vector<const ManifestEntry*> entries(Split split) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& manifest, int indent = 2);
DatasetManifest manifest_from_json(std::string_view text, std::filesystem::path base_dir = {});

struct Violation {
    std::string record_id;
    std::string rule;
    std::string detail;
};

/// Every broken invariant, one entry each. Empty iff the manifest is valid.
/// `check_files` = false skips opening the embedding files.
std::vector<Violation> validate_manifest(const DatasetManifest& manifest, bool check_files = true);

struct SplitItem {
    LayerStackRecord record;
    FeatureLabelSet labels;
};

/// Lazily loads a split's records in manifest order, one resident at a time.
class SplitRange {
public:
    SplitRange(const DatasetManifest& manifest, Split split);

    class iterator {
    public:
        using iterator_category = std::input_iterator_tag;
        using value_type = SplitItem;
        using difference_type = std::ptrdiff_t;
        using pointer = const SplitItem*;
        using reference = const SplitItem&;

        iterator() = default;
        reference operator*() const { return *current_; }
        pointer operator->() const { return &*current_; }
        iterator& operator++();
        void operator++(int) { ++*this; }
        friend bool operator==(const iterator& a, const iterator& b) noexcept {
            return a.pos_ == b.pos_;
        }

    private:
        friend class SplitRange;
        iterator(const SplitRange* owner, std::size_t pos);
        void load();

        const SplitRange* owner_ = nullptr;
        std::size_t pos_ = 0;
        std::optional<SplitItem> current_;
    };

    iterator begin() const { return iterator(this, 0); }
    iterator end() const { return iterator(this, entries_.size()); }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    const DatasetManifest* manifest_;
    std::vector<const ManifestEntry*> entries_;
};

inline SplitRange iterate_split(const DatasetManifest& manifest, Split split) {
    return SplitRange(manifest, split);
}

} // namespace lprobe
