#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "lprobe/embedding_store.hpp"
#include "lprobe/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace lprobe;
namespace fs = std::filesystem;

namespace {

using fixture::random_record;

/// Split shaped like the clinical corpus: n_speakers speakers, n_records recordings (one or two each).
void add_split(DatasetManifest& m, const fs::path& dir, Split split, std::size_t n_speakers,
               std::size_t n_records, const LayerStackRecord& payload) {
    const std::size_t doubles = n_records - n_speakers;
    for (std::size_t s = 0; s < n_speakers; ++s) {
        const std::size_t recs = s < doubles ? 2 : 1;
        for (std::size_t r = 0; r < recs; ++r) {
            ManifestEntry e;
            e.speaker_id = std::string(to_string(split)) + "_spk" + std::to_string(s);
            e.record_id = e.speaker_id + "_" + std::to_string(r);
            e.task = split == Split::ood_test ? Task::SMR : Task::AMR;
            e.split = split;
            e.file_path = "emb/" + e.record_id + ".lps";
            e.labels[Feature::slow_rate] = (s + r) % 3 == 0;
            write_record(payload, dir / e.file_path);
            m.records.push_back(e);
        }
    }
}

} // namespace

TEST_CASE("record round-trip is bit-exact and deterministic") {
    oracle::TempDir tmp("store_rt");
    std::mt19937_64 gen(1);
    const auto r = random_record(gen, 3, 5, 7);
    write_record(r, tmp.path() / "a.lps");
    write_record(r, tmp.path() / "b.lps");
    CHECK(read_file_bytes(tmp.path() / "a.lps") == read_file_bytes(tmp.path() / "b.lps"));
    const auto back = read_record(tmp.path() / "a.lps");
    CHECK(back.n_layers == 3);
    CHECK(back.dim == 5);
    CHECK(back.n_frames == 7);
    REQUIRE(back.data.size() == r.data.size());
    CHECK(std::memcmp(back.data.data(), r.data.data(), r.data.size() * 4) == 0);
    CHECK(read_file_bytes(tmp.path() / "a.lps").size() == kEmbeddingHeaderBytes + 3 * 5 * 7 * 4);
}

TEST_CASE("byte layout is little-endian, layer-major") {
    LayerStackRecord r;
    r.n_layers = 2;
    r.dim = 2;
    r.n_frames = 1;
    r.data = {1.0f, 2.0f, 3.0f, -0.5f};
    const auto b = encode_record(r);
    REQUIRE(b.size() == 36 + 16);
    CHECK(std::memcmp(b.data(), "LPS1", 4) == 0);
    auto u32 = [&](std::size_t at) {
        return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
               std::uint32_t(b[at + 3]) << 24;
    };
    CHECK(u32(4) == 1);
    CHECK(u32(8) == 2);
    CHECK(u32(12) == 2);
    CHECK(u32(16) == 1);
    for (std::size_t i = 20; i < 36; ++i) CHECK(b[i] == std::byte{0});
    CHECK(u32(36) == 0x3f800000u);
    CHECK(u32(48) == 0xbf000000u);
}

TEST_CASE("full-size 13x768 record keeps its dims") {
    oracle::TempDir tmp("store_big");
    LayerStackRecord r;
    r.n_layers = 13;
    r.dim = 768;
    r.n_frames = 312;
    r.data.assign(13 * 768 * 312, 0.25f);
    write_record(r, tmp.path() / "x.lps");
    const auto back = read_record(tmp.path() / "x.lps");
    CHECK(back.n_layers == 13);
    CHECK(back.dim == 768);
    CHECK(back.n_frames == 312);
}

TEST_CASE("write rejects invariant violations") {
    oracle::TempDir tmp("store_bad");
    LayerStackRecord r;
    r.n_layers = 2;
    r.dim = 3;
    r.n_frames = 2;
    r.data.assign(11, 0.0f);
    CHECK_THROWS_AS(write_record(r, tmp.path() / "a.lps"), ShapeError);
    r.data.assign(12, 0.0f);
    r.data[5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(write_record(r, tmp.path() / "a.lps"), NonFiniteError);
    r.data[5] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(write_record(r, tmp.path() / "a.lps"), NonFiniteError);
    r.data[5] = 0.0f;
    r.n_frames = 0;
    r.data.clear();
    CHECK_THROWS_AS(write_record(r, tmp.path() / "a.lps"), ShapeError);
}

TEST_CASE("read rejects bad magic, version, truncation, trailing bytes, NaN") {
    std::mt19937_64 gen(2);
    const auto good = encode_record(random_record(gen, 2, 3, 4));

    auto bad = good;
    bad[0] = std::byte{'X'};
    CHECK_THROWS_WITH_AS(decode_record(bad), doctest::Contains("magic"), FormatError);

    bad = good;
    bad[4] = std::byte{2};
    CHECK_THROWS_WITH_AS(decode_record(bad), doctest::Contains("version"), FormatError);

    bad = good;
    bad.resize(good.size() - 10);
    const std::string expect = "expected " + std::to_string(good.size()) + " bytes, got " +
                               std::to_string(good.size() - 10);
    CHECK_THROWS_WITH_AS(decode_record(bad), doctest::Contains(expect.c_str()), FormatError);

    bad = good;
    bad.push_back(std::byte{0});
    CHECK_THROWS_AS(decode_record(bad), FormatError);

    bad = good;
    const std::uint32_t nan = 0x7fc00000u;
    for (int i = 0; i < 4; ++i) bad[40 + i] = static_cast<std::byte>((nan >> (8 * i)) & 0xff);
    CHECK_THROWS_AS(decode_record(bad), NonFiniteError);

    CHECK_THROWS_AS(decode_record(std::span(good.data(), 10)), FormatError);

    oracle::TempDir tmp("store_readerr");
    std::ofstream(tmp.path() / "t.lps", std::ios::binary).write(reinterpret_cast<const char*>(good.data()), 50);
    CHECK_THROWS_WITH(read_record(tmp.path() / "t.lps"), doctest::Contains("t.lps"));
}

TEST_CASE("every single-byte header corruption is rejected") {
    std::mt19937_64 gen(3);
    const auto good = encode_record(random_record(gen, 3, 4, 5));
    for (std::size_t i = 0; i < kEmbeddingHeaderBytes; ++i)
        for (int delta : {1, 0x80, 0xff}) {
            auto bad = good;
            bad[i] = static_cast<std::byte>(static_cast<unsigned>(bad[i]) ^ static_cast<unsigned>(delta));
            CHECK_THROWS(decode_record(bad));
        }
}

TEST_CASE("feature, task and split name parsing") {
    CHECK(parse_feature("strained") == 0u);
    CHECK(parse_feature("iab") == 1u);
    CHECK(parse_feature("rr") == 2u);
    CHECK(parse_feature("slow_rate") == 3u);
    CHECK(parse_feature("d") == 4u);
    CHECK_FALSE(parse_feature("loud"));
    CHECK(parse_task("SMR") == Task::SMR);
    CHECK_FALSE(parse_task("XMR"));
    CHECK(parse_split("ood_test") == Split::ood_test);
    CHECK(to_string(Split::val) == "val");
}

TEST_CASE("corpus-shaped manifest validates and iterates per split") {
    oracle::TempDir tmp("store_corpus");
    fs::create_directories(tmp.path() / "emb");
    std::mt19937_64 gen(4);
    const auto payload = random_record(gen, 2, 2, 1);
    DatasetManifest m;
    m.base_dir = tmp.path();
    add_split(m, tmp.path(), Split::train, 487, 686, payload);
    add_split(m, tmp.path(), Split::val, 50, 74, payload);
    add_split(m, tmp.path(), Split::test, 96, 136, payload);
    add_split(m, tmp.path(), Split::ood_test, 209, 223, payload);
    save_manifest(m, tmp.path() / "manifest.json");

    const auto loaded = load_manifest(tmp.path() / "manifest.json");
    CHECK(validate_manifest(loaded).empty());
    CHECK(loaded.entries(Split::train).size() == 686);

    std::size_t n = 0;
    for (const auto& item : iterate_split(loaded, Split::val)) {
        CHECK(item.record.record_id == loaded.entries(Split::val)[n]->record_id);
        ++n;
    }
    CHECK(n == 74);
    n = 0;
    for (const auto& item : iterate_split(loaded, Split::ood_test)) {
        CHECK(item.record.task == Task::SMR);
        ++n;
    }
    CHECK(n == 223);

    DatasetManifest no_val = loaded;
    std::erase_if(no_val.records, [](const ManifestEntry& e) { return e.split == Split::val; });
    const auto empty = iterate_split(no_val, Split::val);
    CHECK(empty.begin() == empty.end());
}

TEST_CASE("manifest JSON schema") {
    DatasetManifest m;
    ManifestEntry e;
    e.record_id = "r1";
    e.speaker_id = "s1";
    e.task = Task::AMR;
    e.file_path = "r1.lps";
    e.labels[Feature::strained] = true;
    e.split = Split::test;
    m.records.push_back(e);
    const auto j = nlohmann::json::parse(manifest_to_json(m));
    CHECK(j.at("feature_names") == nlohmann::json(std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end())));
    const auto& r = j.at("records").at(0);
    CHECK(r.at("record_id") == "r1");
    CHECK(r.at("speaker_id") == "s1");
    CHECK(r.at("task") == "AMR");
    CHECK(r.at("file_path") == "r1.lps");
    CHECK(r.at("split") == "test");
    CHECK(r.at("labels").at("strained") == true);
    CHECK(r.at("labels").at("distortions") == false);
    CHECK(r.at("labels").size() == 5);

    const auto back = manifest_from_json(manifest_to_json(m));
    REQUIRE(back.records.size() == 1);
    CHECK(back.records[0].labels == e.labels);
    CHECK(back.records[0].split == Split::test);

    CHECK_THROWS(manifest_from_json(R"({"feature_names": [], "records": [{"record_id": "a"}]})"));
    CHECK_THROWS(manifest_from_json(
        R"({"feature_names": [], "records": [{"record_id": "a", "speaker_id": "s", "task": "XMR",
            "file_path": "f", "split": "train", "labels": {}}]})"));
}

TEST_CASE("single-field corruptions each produce a violation") {
    oracle::TempDir tmp("store_corrupt");
    fs::create_directories(tmp.path() / "emb");
    std::mt19937_64 gen(5);
    const auto payload = random_record(gen, 2, 3, 2);
    DatasetManifest m;
    m.base_dir = tmp.path();
    add_split(m, tmp.path(), Split::train, 6, 8, payload);
    add_split(m, tmp.path(), Split::test, 3, 4, payload);
    REQUIRE(validate_manifest(m).empty());

    auto rules = [](const std::vector<Violation>& v) {
        std::vector<std::string> out;
        for (const auto& x : v) out.push_back(x.rule);
        return out;
    };

    auto leak = m;
    leak.records.back().speaker_id = leak.records.front().speaker_id;
    const auto lv = validate_manifest(leak);
    REQUIRE(lv.size() == 1);
    CHECK(lv[0].rule == "speaker_disjoint");
    CHECK(lv[0].record_id == leak.records.back().record_id);

    auto dup = m;
    dup.records[3].record_id = dup.records[2].record_id;
    const auto dv = validate_manifest(dup, false);
    REQUIRE(dv.size() == 1);
    CHECK(dv[0].rule == "unique_record_id");

    auto missing = m;
    missing.records[1].file_path = "emb/nope.lps";
    CHECK(rules(validate_manifest(missing)) == std::vector<std::string>{"file_exists"});

    auto both = m;
    both.records[0].labels[Feature::rapid_rate] = true;
    both.records[0].labels[Feature::slow_rate] = true;
    CHECK(rules(validate_manifest(both)) == std::vector<std::string>{"rate_exclusive"});

    auto garbage = m;
    std::ofstream(tmp.path() / "emb/garbage.lps") << "not an embedding";
    garbage.records[2].file_path = "emb/garbage.lps";
    CHECK(rules(validate_manifest(garbage)) == std::vector<std::string>{"file_valid"});

    auto dims = m;
    write_record(random_record(gen, 3, 3, 2), tmp.path() / "emb/other.lps");
    dims.records[4].file_path = "emb/other.lps";
    CHECK(rules(validate_manifest(dims)) == std::vector<std::string>{"dims_consistent"});

    auto names = m;
    std::swap(names.feature_names[0], names.feature_names[1]);
    CHECK(rules(validate_manifest(names)) == std::vector<std::string>{"feature_names"});

    // ood speakers must be new
    auto ood = m;
    ManifestEntry e = ood.records.front();
    e.record_id = "ood_reuse";
    e.split = Split::ood_test;
    e.task = Task::SMR;
    ood.records.push_back(e);
    CHECK(rules(validate_manifest(ood)) == std::vector<std::string>{"speaker_disjoint"});
}

TEST_CASE("100 randomized round trips") {
    std::mt19937_64 gen(6);
    for (int i = 0; i < 100; ++i) {
        const auto r = random_record(gen, 1 + gen() % 13, 1 + gen() % 40, 1 + gen() % 30);
        const auto bytes = encode_record(r);
        const auto back = decode_record(bytes);
        CHECK(back == r);
        CHECK(encode_record(back) == bytes);
    }
}
