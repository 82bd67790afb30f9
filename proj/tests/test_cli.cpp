#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(LPROBE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p) << s;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

} // namespace

TEST_CASE("command line end to end") {
    oracle::TempDir tmp("cli");
    const auto& d = tmp.path();
    write_text(d / "plant.json", lprobe::to_json(oracle::small_spec(2)).dump());
    REQUIRE(run("synth --spec " + q(d / "plant.json") + " --out " + q(d / "data")) == 0);
    const auto manifest = d / "data" / "manifest.json";
    REQUIRE(fs::exists(manifest));
    CHECK(run("validate " + q(manifest)) == 0);

    write_text(d / "cfg.json", R"({"architecture":{"layer_mode":"weighted_sum"},"train":{"epochs":2}})");
    REQUIRE(run("train " + q(manifest) + " --config " + q(d / "cfg.json") + " --out " + q(d / "t")) == 0);
    CHECK(fs::exists(d / "t" / "params.lppm"));
    CHECK(fs::exists(d / "t" / "epochs.jsonl"));
    CHECK(fs::exists(d / "t" / "test_report.json"));

    REQUIRE(run("evaluate " + q(d / "t" / "params.lppm") + " " + q(manifest) +
                " --split val --exclude iab,rr --n-boot 50 --out " + q(d / "val.json")) == 0);
    const auto report = nlohmann::json::parse(read_text(d / "val.json"));
    CHECK(report.at("split") == "val");
    CHECK(report.at("features").size() == 3);
    CHECK(report.at("excluded_features").size() == 2);

    write_text(d / "grid.json",
               R"({"learning_rates":[0.001],"weight_decays":[0.0001],"dropout_ps":[0.3],)"
               R"("classifier_bottlenecks":[null],"shared_dense_bottlenecks":[null],"head_modes":["single"],)"
               R"("shared_dense_flags":[false],"epochs":2,"eval":{"n_boot":50}})");
    const std::string grid = "grid " + q(manifest) + " --spec " + q(d / "grid.json") + " --out " + q(d / "res");
    REQUIRE(run(grid + " --max-new-runs 2") == 0);
    REQUIRE(run(grid + " --resume --parallel 2") == 0);
    std::size_t runs = 0;
    for (const auto& e : fs::directory_iterator(d / "res" / "runs")) runs += e.path().extension() == ".json";
    CHECK(runs == 5);

    CHECK(run("analyze " + q(d / "res")) == 0);
    CHECK(run("table " + q(d / "res") + " --csv " + q(d / "table.csv")) == 0);
    CHECK(read_text(d / "table.csv").rfind("layer,single_no_sd\n", 0) == 0);
    CHECK(run("plotdata " + q(d / "res") + " --figure per_layer_lines --out " + q(d / "plot.csv")) == 0);
    std::size_t lines = 0;
    for (char c : read_text(d / "plot.csv")) lines += c == '\n';
    CHECK(lines == 1 + 5 * 5);
    CHECK(run("plotdata " + q(d / "res") + " --figure pie") == 1);

    const auto victim = d / "data" / "embeddings";
    const auto first = fs::directory_iterator(victim)->path();
    fs::resize_file(first, fs::file_size(first) - 4);
    CHECK(run("validate " + q(manifest)) == 1);
}

TEST_CASE("command line usage errors") {
    oracle::TempDir tmp("cli_err");
    CHECK(run("") != 0);
    CHECK(run("frobnicate") == 1);
    CHECK(run("validate") == 1);
    CHECK(run("validate " + q(tmp.path() / "missing.json")) == 1);
    write_text(tmp.path() / "bad.json", R"({"dim": 0})");
    CHECK(run("synth --spec " + q(tmp.path() / "bad.json") + " --out " + q(tmp.path() / "x")) == 1);
    CHECK(run("--help") == 0);
}
