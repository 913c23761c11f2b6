#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voltpomdp/experiment.hpp"

namespace fs = std::filesystem;
using namespace voltpomdp;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInvalid = 2;

int report_config_error(const ConfigError& e) {
    std::cerr << "invalid config:\n";
    for (const auto& d : e.diagnostics()) std::cerr << "  " << d << '\n';
    return kExitInvalid;
}

std::string default_label(const fs::path& csv) {
    if (csv.filename() == "runs.csv" || csv.filename() == "merged.csv") {
        const auto parent = csv.parent_path().filename().string();
        if (!parent.empty()) return parent;
    }
    return csv.stem().string();
}

std::string cell(double v) { return format_number(v); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Voltage-control POMDP experiment harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "Train every variant of an experiment for each seed and write CSVs");
    run->add_option("--config", config_path, "Experiment config (or a run manifest)")->required();
    run->add_option("--seeds", seeds, "Comma-separated seeds overriding the config")->delimiter(',');
    run->add_option("--out", out_dir, "Output directory (default: the config's output_dir, else runs/<name>)");

    auto* validate = app.add_subcommand("validate", "Check an experiment config without running it");
    validate->add_option("--config", config_path, "Experiment config")->required();

    std::string csv_a, csv_b, metric, label_a, label_b, report_path;
    double threshold = 0.0;
    bool lower = false;
    std::size_t window = 50;
    auto* compare = app.add_subcommand("compare", "Compare two runs on one metric");
    compare->add_option("--a", csv_a, "First CSV (runs.csv or a per-seed CSV)")->required();
    compare->add_option("--b", csv_b, "Second CSV")->required();
    compare->add_option("--metric", metric, "Column to compare")->required();
    compare->add_option("--threshold", threshold, "Threshold for episodes-to-threshold")->required();
    compare->add_flag("--lower-is-better", lower, "Threshold is reached at or below the value; lower final means win");
    compare->add_option("--window", window, "Final window length in rows")->check(CLI::PositiveNumber);
    compare->add_option("--label-a", label_a, "Name for the first run");
    compare->add_option("--label-b", label_b, "Name for the second run");
    compare->add_option("--report", report_path, "Also write the per-seed breakdown to this CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    if (*validate) {
        try {
            const auto cfg = load_experiment(config_path);
            std::cout << "ok: " << cfg.name << " (" << cfg.variants.size() << " variant(s), " << cfg.seeds.size()
                      << " seed(s))\n";
            for (const auto& v : cfg.variants) std::cout << "  " << v.name << ": " << to_string(v.agent) << '\n';
            return 0;
        } catch (const ConfigError& e) {
            return report_config_error(e);
        }
    }

    if (*run) {
        ExperimentConfig cfg;
        try {
            cfg = load_experiment(config_path);
        } catch (const ConfigError& e) {
            return report_config_error(e);
        }
        if (!seeds.empty()) cfg.seeds = seeds;
        fs::path out = !out_dir.empty() ? fs::path(out_dir)
                       : !cfg.output_dir.empty() ? fs::path(cfg.output_dir)
                                                 : fs::path("runs") / cfg.name;
        try {
            const unsigned workers = worker_count(cfg.variants.size() * cfg.seeds.size());
            std::cout << "running " << cfg.name << ": " << cfg.variants.size() << " variant(s) x " << cfg.seeds.size()
                      << " seed(s) on " << workers << " worker(s)\n";
            const auto result = run_experiment(cfg, out);
            for (const auto& f : result.files) std::cout << "  wrote " << f.string() << '\n';
            std::cout << "  wrote " << result.manifest.string() << '\n';
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kExitRuntime;
        }
    }

    MetricsTable a, b;
    try {
        a = MetricsTable::read_csv(fs::path(csv_a));
        b = MetricsTable::read_csv(fs::path(csv_b));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
    CompareOptions opts;
    opts.metric = metric;
    opts.threshold = threshold;
    opts.lower_is_better = lower;
    opts.final_window = window;
    opts.label_a = label_a.empty() ? default_label(csv_a) : label_a;
    opts.label_b = label_b.empty() ? default_label(csv_b) : label_b;
    if (opts.label_a == opts.label_b && label_a.empty() && label_b.empty()) {
        opts.label_a = "a";
        opts.label_b = "b";
    }
    CompareReport rep;
    try {
        rep = compare_runs(a, b, opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    }

    std::cout << "seed  " << opts.label_a << "_to_threshold  " << opts.label_b << "_to_threshold  " << opts.label_a
              << "_final  " << opts.label_b << "_final\n";
    for (const auto& s : rep.seeds) {
        std::cout << s.seed << "  " << cell(s.a_reach) << "  " << cell(s.b_reach) << "  " << cell(s.a_final) << "  "
                  << cell(s.b_final) << '\n';
    }
    std::cout << "episodes-to-threshold: " << rep.reach_verdict << " (" << rep.a_reach_wins << " vs "
              << rep.b_reach_wins << " seeds)\n";
    std::cout << "final window: " << rep.final_verdict << " (" << rep.a_final_wins << " vs " << rep.b_final_wins
              << " seeds)\n";
    if (!report_path.empty()) rep.table().write_csv(fs::path(report_path));
    return 0;
}
