// lprobe: command-line front end for the probing harness.
//
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lprobe/embedding_store.hpp"
#include "lprobe/errors.hpp"
#include "lprobe/evaluation.hpp"
#include "lprobe/experiment.hpp"
#include "lprobe/pooled_dataset.hpp"
#include "lprobe/probe_model.hpp"
#include "lprobe/synthgen.hpp"
#include "lprobe/training.hpp"

namespace fs = std::filesystem;
using namespace lprobe;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct ValidationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ojson read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationFailure("cannot open '" + path + "'");
    try {
        return ojson::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationFailure("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
}

std::vector<std::size_t> parse_feature_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto f = parse_feature(item);
        if (!f) throw ValidationFailure("unknown feature '" + item + "'");
        out.push_back(*f);
    }
    return out;
}

DatasetManifest load_valid_manifest(const std::string& path) {
    DatasetManifest m = load_manifest(path);
    const auto violations = validate_manifest(m);
    if (!violations.empty()) {
        for (const auto& v : violations)
            std::cerr << v.record_id << ": " << v.rule << ": " << v.detail << "\n";
        throw ValidationFailure(std::to_string(violations.size()) + " manifest violation(s)");
    }
    return m;
}

struct FilterArgs {
    std::string head = "single";
    std::string shared = "no";
    std::optional<double> lr = 1e-3;
    std::optional<double> wd = 1e-4;
    std::optional<double> dropout = 0.3;
    std::string split = "test";

    void add_to(CLI::App* cmd, bool with_cell) {
        if (with_cell) {
            cmd->add_option("--head", head, "single | multi | any")->capture_default_str();
            cmd->add_option("--shared-dense", shared, "yes | no | any")->capture_default_str();
        }
        cmd->add_option("--lr", lr, "learning rate filter");
        cmd->add_option("--wd", wd, "weight decay filter");
        cmd->add_option("--dropout", dropout, "dropout filter");
        cmd->add_option("--split", split, "test | ood_test")->capture_default_str();
    }

    ResultFilter build() const {
        ResultFilter f = reporting_point_filter();
        f.learning_rate = lr;
        f.weight_decay = wd;
        f.dropout_p = dropout;
        if (head == "single")
            f.head_mode = HeadMode::single;
        else if (head == "multi")
            f.head_mode = HeadMode::multi;
        else if (head != "any")
            throw ValidationFailure("--head must be single, multi or any");
        if (shared == "yes")
            f.shared_dense = true;
        else if (shared == "no")
            f.shared_dense = false;
        else if (shared != "any")
            throw ValidationFailure("--shared-dense must be yes, no or any");
        return f;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise probing harness"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "override every seed in the given configs")->option_text("N");

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "check a dataset manifest and its files");
    std::string manifest_path;
    validate_cmd->add_option("manifest", manifest_path)->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train one probe");
    std::string config_path, train_out = "train_out";
    train_cmd->add_option("manifest", manifest_path)->required();
    train_cmd->add_option("--config", config_path, "JSON with 'architecture' and 'train' objects");
    train_cmd->add_option("--out", train_out, "output directory")->capture_default_str();

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "run a hyperparameter grid");
    std::string spec_path, results_dir = "results";
    std::size_t parallel = 1, max_new_runs = 0;
    bool resume = false;
    grid_cmd->add_option("manifest", manifest_path)->required();
    grid_cmd->add_option("--spec", spec_path, "GridSpec JSON (default: the fixed reporting point)");
    grid_cmd->add_option("--parallel", parallel, "concurrent runs")->capture_default_str();
    grid_cmd->add_flag("--resume", resume, "reuse completed runs in the results directory");
    grid_cmd->add_option("--max-new-runs", max_new_runs, "stop after this many new runs");
    grid_cmd->add_option("--out", results_dir, "results directory")->capture_default_str();

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score saved parameters on a split");
    std::string params_path, split_name = "test", exclude, report_out;
    std::size_t n_boot = 1000;
    eval_cmd->add_option("params", params_path)->required();
    eval_cmd->add_option("manifest", manifest_path)->required();
    eval_cmd->add_option("--split", split_name)->capture_default_str();
    eval_cmd->add_option("--exclude", exclude, "comma-separated features");
    eval_cmd->add_option("--n-boot", n_boot)->capture_default_str();
    eval_cmd->add_option("--out", report_out, "write the report JSON here");

    // analyze / table / plotdata
    auto* analyze_cmd = app.add_subcommand("analyze", "best/worst/final layer analysis");
    auto* table_cmd = app.add_subcommand("table", "macro balanced accuracy per layer and cell");
    auto* plot_cmd = app.add_subcommand("plotdata", "long-format CSV for a figure");
    FilterArgs analyze_filter, table_filter, plot_filter;
    std::string csv_out, figure_name, plot_out;
    analyze_cmd->add_option("results_dir", results_dir)->required();
    analyze_filter.add_to(analyze_cmd, true);
    table_cmd->add_option("results_dir", results_dir)->required();
    table_cmd->add_option("--csv", csv_out, "also write the CSV rendering here");
    table_filter.add_to(table_cmd, false);
    plot_cmd->add_option("results_dir", results_dir)->required();
    plot_cmd->add_option("--figure", figure_name, "per_layer_lines | best_worst_bars | lr_comparison")
        ->required();
    plot_cmd->add_option("--out", plot_out, "write the CSV here instead of stdout");
    plot_filter.add_to(plot_cmd, true);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a planted-layer dataset");
    std::string synth_spec, synth_out;
    synth_cmd->add_option("--spec", synth_spec, "PlantSpec JSON (default: built-in defaults)");
    synth_cmd->add_option("--out", synth_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*validate_cmd) {
            const auto m = load_manifest(manifest_path);
            const auto violations = validate_manifest(m);
            for (const auto& v : violations)
                std::cout << v.record_id << "\t" << v.rule << "\t" << v.detail << "\n";
            std::cout << m.records.size() << " records, " << violations.size() << " violation(s)\n";
            return violations.empty() ? 0 : kExitValidation;
        }

        if (*train_cmd) {
            ojson cfg = config_path.empty() ? ojson::object() : read_json(config_path);
            const auto manifest = load_valid_manifest(manifest_path);
            const auto data = load_pooled(manifest);
            TrainConfig tc = train_config_from_json(cfg.value("train", ojson::object()));
            if (seed) tc.seed = *seed;
            ArchitectureConfig arch = architecture_from_json(cfg.value("architecture", ojson::object()));
            arch.n_layers = data.n_layers;
            arch.input_dim = data.dim;
            arch.dropout_p = tc.dropout_p;
            const auto result = train(data, arch, tc);
            fs::create_directories(train_out);
            save_params(fs::path(train_out) / "params.lppm", arch, result.params);
            write_epoch_logs(fs::path(train_out) / "epochs.jsonl", result.logs);
            EvalOptions eo;
            if (seed) eo.seed = *seed;
            if (!data.test.empty()) {
                const auto rep = evaluate(result.params, arch, data.test, {}, eo, "test");
                write_text(fs::path(train_out) / "test_report.json", to_json(rep).dump(2) + "\n");
            }
            std::cout << "final train loss " << result.logs.back().train_loss << "\n";
            return 0;
        }

        if (*grid_cmd) {
            GridSpec spec = spec_path.empty() ? fixed_point_grid() : grid_spec_from_json(read_json(spec_path));
            if (seed) spec.seed = spec.eval.seed = *seed;
            const auto manifest = load_valid_manifest(manifest_path);
            RunOptions opts{results_dir, parallel, resume, max_new_runs};
            const auto outcome = run_grid(load_pooled(manifest), spec, opts);
            std::cout << outcome.results.size() << " results: " << outcome.executed << " executed, "
                      << outcome.reused << " reused, " << outcome.failed << " failed\n";
            for (const auto& r : outcome.results)
                if (r.status != "completed") std::cerr << r.run_id << ": " << r.error << "\n";
            return outcome.failed == 0 ? 0 : kExitRuntime;
        }

        if (*eval_cmd) {
            const auto split = parse_split(split_name);
            if (!split) throw ValidationFailure("unknown split '" + split_name + "'");
            auto [arch, params] = load_params(params_path);
            const auto manifest = load_valid_manifest(manifest_path);
            EvalOptions eo;
            eo.n_boot = n_boot;
            if (seed) eo.seed = *seed;
            const auto excluded = exclude.empty() && *split == Split::ood_test
                                      ? default_ood_exclusions()
                                      : parse_feature_list(exclude);
            const auto rep = evaluate(params, arch, manifest, *split, excluded, eo);
            const std::string text = to_json(rep).dump(2) + "\n";
            if (report_out.empty())
                std::cout << text;
            else
                write_text(report_out, text);
            return 0;
        }

        if (*analyze_cmd) {
            const auto results = load_results(results_dir);
            const auto a = analyze_layers(results, analyze_filter.build(), analyze_filter.split);
            std::cout << render_analysis(a);
            return 0;
        }

        if (*table_cmd) {
            const auto results = load_results(results_dir);
            const auto table = build_table(results, table_filter.build(), table_filter.split);
            std::size_t n_features = kNumFeatures;
            if (!results.empty()) n_features = results.front().arch.n_features;
            const auto rendered = render_table(table, n_features);
            std::cout << rendered.text;
            if (!csv_out.empty()) write_text(csv_out, rendered.csv);
            return 0;
        }

        if (*plot_cmd) {
            const auto figure = parse_figure(figure_name);
            if (!figure) throw ValidationFailure("unknown figure '" + figure_name + "'");
            const auto results = load_results(results_dir);
            const auto csv = emit_plot_data(results, *figure, plot_filter.build(), plot_filter.split);
            if (plot_out.empty())
                std::cout << csv;
            else
                write_text(plot_out, csv);
            return 0;
        }

        if (*synth_cmd) {
            PlantSpec spec = synth_spec.empty() ? PlantSpec{} : plant_spec_from_json(read_json(synth_spec));
            if (seed) spec.seed = *seed;
            const auto m = generate(spec, synth_out);
            std::cout << "wrote " << m.records.size() << " records to " << synth_out << "\n";
            return 0;
        }
    } catch (const ValidationFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
