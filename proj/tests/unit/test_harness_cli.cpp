#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "voltpomdp/experiment.hpp"

namespace fs = std::filesystem;
using namespace voltpomdp;

namespace {

const std::string kCase = VOLTPOMDP_CASES_DIR "/wscc9.json";

std::string tiny_config(const std::string& extra_variant = "") {
    return R"({
  "name": "tiny",
  "env": {"case_file": ")" + kCase + R"(", "e_max": 5},
  "seeds": [3, 1],
  "variants": [
    {"name": "bql", "agent": "bql", "params": {"episodes": 30}},
    {"name": "dqn", "agent": "dqn", "env": {"terminate_on_goal": false}, "params": {"hidden": [8], "episodes": 6, "update_frequency": 10}},
    {"name": "bdqn", "agent": "bdqn", "env": {"terminate_on_goal": false}, "params": {"hidden": [8], "episodes": 6, "update_frequency": 10, "sample_length": 50}},
    {"name": "bac", "agent": "bac", "params": {"n_updates": 2, "episodes_per_update": 2, "eval_every": 1, "eval_episodes": 2}})" +
           extra_variant + R"(
  ]
})";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("voltpomdp_harness_" + name);
    fs::remove_all(dir);
    return dir;
}

std::vector<std::string> diagnostics_of(const std::string& text) {
    try {
        parse_experiment(text);
    } catch (const ConfigError& e) {
        return e.diagnostics();
    }
    return {};
}

bool mentions(const std::vector<std::string>& diags, const std::string& needle) {
    for (const auto& d : diags) {
        if (d.find(needle) != std::string::npos) return true;
    }
    return false;
}

// Per-index mean and sample std recomputed straight from the per-seed CSV text.
std::map<double, std::pair<double, double>> reaggregate(const std::vector<fs::path>& files, const std::string& column) {
    std::map<double, std::vector<double>> values;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string header, line;
        std::getline(in, header);
        std::vector<std::string> names;
        std::stringstream hs(header);
        for (std::string n; std::getline(hs, n, ',');) names.push_back(n);
        const auto col = static_cast<std::size_t>(std::find(names.begin(), names.end(), column) - names.begin());
        while (std::getline(in, line)) {
            std::vector<std::string> cells;
            std::stringstream ls(line);
            for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
            auto& v = values[std::stod(cells[0])];
            if (cells[col] != "NA") v.push_back(std::stod(cells[col]));
        }
    }
    std::map<double, std::pair<double, double>> out;
    for (const auto& [index, v] : values) {
        long double sum = 0;
        for (double x : v) sum += x;
        const long double mean = v.empty() ? NAN : sum / v.size();
        long double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out[index] = {static_cast<double>(mean), v.size() > 1 ? static_cast<double>(std::sqrt(ss / (v.size() - 1))) : NAN};
    }
    return out;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || std::abs(a - b) <= 1e-9 * (1.0 + std::abs(b)); }

MetricsTable series(std::vector<std::pair<double, std::vector<double>>> per_seed) {
    MetricsTable t;
    t.columns = {"seed", "episode", "score"};
    for (const auto& [seed, values] : per_seed) {
        for (std::size_t i = 0; i < values.size(); ++i) t.add_row({seed, static_cast<double>(i), values[i]});
    }
    return t;
}

}  // namespace

TEST_CASE("experiment config parsing") {
    const auto cfg = parse_experiment(tiny_config());
    CHECK(cfg.name == "tiny");
    REQUIRE(cfg.variants.size() == 4);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 1});
    CHECK(cfg.variants[0].agent == AgentKind::bql);
    CHECK(std::get<BqlConfig>(cfg.variants[0].params).episodes == 30);
    CHECK(std::get<BqlConfig>(cfg.variants[0].params).exploration == Exploration::vpi);
    CHECK(cfg.variants[0].env.terminate_on_goal);
    CHECK_FALSE(cfg.variants[1].env.terminate_on_goal);
    CHECK(cfg.variants[1].env.e_max == 5);
    const auto& d = std::get<DqnConfig>(cfg.variants[2].params);
    CHECK(d.algo == DqnAlgo::bdqn);
    CHECK(d.hidden == std::vector<int>{8});
    CHECK(d.mh.sigma_prop == 0.05);
    CHECK(std::get<BacConfig>(cfg.variants[3].params).beta == 0.0025);
    CHECK(fs::path(cfg.variants[0].env.case_file).is_absolute());

    SUBCASE("single-agent config gets one default variant") {
        const auto one = parse_experiment(R"({"name": "x", "agent": "bac", "env": {"case_file": ")" + kCase +
                                          R"("}, "params": {"beta": 0.005}, "seeds": [1]})");
        REQUIRE(one.variants.size() == 1);
        CHECK(one.variants[0].name == "default");
        CHECK(std::get<BacConfig>(one.variants[0].params).beta == 0.005);
    }
    SUBCASE("resolved JSON round-trips") {
        const auto text = to_json(cfg);
        CHECK(to_json(parse_experiment(text)) == text);
    }
    SUBCASE("relative case paths resolve against the config directory") {
        const auto rel = parse_experiment(R"({"name": "x", "agent": "bql", "env": {"case_file": "wscc9.json"}, "seeds": [1]})",
                                          VOLTPOMDP_CASES_DIR);
        CHECK(fs::equivalent(rel.variants[0].env.case_file, kCase));
    }
}

TEST_CASE("config diagnostics") {
    const auto unknown_agent = diagnostics_of(R"({"name": "x", "agent": "sarsa", "env": {"case_file": ")" + kCase +
                                              R"("}, "seeds": [1]})");
    CHECK(mentions(unknown_agent, "valid agents: bql, dqn, bdqn, bac"));

    const auto many = diagnostics_of(
        R"({"name": "x", "agent": "dqn", "env": {"case_file": "missing.json", "colour": 1}, "params": {"lr": "fast", "depth": 3}, "seeds": [], "extra": true})");
    CHECK(mentions(many, "extra is not a recognized key"));
    CHECK(mentions(many, "seeds must be a non-empty array"));
    CHECK(mentions(many, "colour is not a recognized key"));
    CHECK(mentions(many, "params.lr must be a number"));
    CHECK(mentions(many, "params.depth is not a recognized key"));

    CHECK(mentions(diagnostics_of(R"({"name": "x", "agent": "bql", "env": {"case_file": "nope.json"}, "seeds": [1]})"),
                   "does not exist"));
    CHECK(mentions(diagnostics_of(R"({"name": "x", "agent": "bac", "env": {"case_file": ")" + kCase +
                                  R"("}, "params": {"n_updates": 0}, "seeds": [1]})"),
                   "params"));
    CHECK(mentions(diagnostics_of(tiny_config(R"(, {"name": "bql"})")), "repeated"));
    CHECK(mentions(diagnostics_of("{"), "not valid JSON"));
    CHECK_THROWS_AS(parse_agent_kind("ppo"), InvalidArgument);
    CHECK(agent_names().size() == 4);
}

TEST_CASE("worker count honours VOLTPOMDP_THREADS") {
    ::setenv("VOLTPOMDP_THREADS", "3", 1);
    CHECK(worker_count(10) == 3);
    CHECK(worker_count(2) == 2);
    ::setenv("VOLTPOMDP_THREADS", "1", 1);
    CHECK(worker_count(10) == 1);
    ::setenv("VOLTPOMDP_THREADS", "zero", 1);
    CHECK(worker_count(1) == 1);
    ::unsetenv("VOLTPOMDP_THREADS");
    CHECK(worker_count(0) == 1);
}

TEST_CASE("run writes per-seed, stacked and merged CSVs plus a manifest") {
    const auto cfg = parse_experiment(tiny_config());
    const auto dir = fresh_dir("run");
    ::setenv("VOLTPOMDP_THREADS", "3", 1);
    const auto out = run_experiment(cfg, dir);
    ::unsetenv("VOLTPOMDP_THREADS");
    CHECK(out.files.size() == 4 * 4);
    CHECK(fs::exists(out.manifest));

    for (const auto& v : cfg.variants) {
        const std::vector<fs::path> seeds{dir / v.name / "seed_3.csv", dir / v.name / "seed_1.csv"};
        const auto merged = MetricsTable::read_csv(dir / v.name / "merged.csv");
        const auto per_seed = MetricsTable::read_csv(seeds[0]);
        for (std::size_t c = 1; c < per_seed.columns.size(); ++c) {
            const auto& name = per_seed.columns[c];
            const auto oracle = reaggregate(seeds, name);
            const auto means = merged.column(name + "_mean");
            const auto stds = merged.column(name + "_std");
            const auto index = merged.column(per_seed.columns[0]);
            REQUIRE(index.size() == oracle.size());
            for (std::size_t i = 0; i < index.size(); ++i) {
                const auto& [m, s] = oracle.at(index[i]);
                CHECK(same(means[i], m));
                CHECK(same(stds[i], s));
            }
        }
        const auto stacked = MetricsTable::read_csv(dir / v.name / "runs.csv");
        CHECK(stacked.columns.front() == "seed");
        CHECK(stacked.rows.size() == per_seed.rows.size() + MetricsTable::read_csv(seeds[1]).rows.size());
    }

    SUBCASE("re-running from the manifest reproduces every CSV byte for byte") {
        const auto again = fresh_dir("rerun");
        ::setenv("VOLTPOMDP_THREADS", "1", 1);
        const auto rerun = run_experiment(load_experiment(out.manifest), again);
        ::unsetenv("VOLTPOMDP_THREADS");
        REQUIRE(rerun.files.size() == out.files.size());
        for (std::size_t i = 0; i < out.files.size(); ++i) {
            CHECK(fs::relative(rerun.files[i], again) == fs::relative(out.files[i], dir));
            CHECK(slurp(rerun.files[i]) == slurp(out.files[i]));
        }
        fs::remove_all(again);
    }
    fs::remove_all(dir);
}

TEST_CASE("merge of seed tables") {
    MetricsTable a, b;
    a.columns = b.columns = {"episode", "score"};
    a.rows = {{0, 1.0}, {1, 3.0}, {2, 5.0}};
    b.rows = {{0, 3.0}, {1, kMissing}};
    const std::vector<MetricsTable> both{a, b};
    const auto m = merge_seed_tables(both);
    CHECK(m.columns == std::vector<std::string>{"episode", "n", "score_mean", "score_std"});
    REQUIRE(m.rows.size() == 3);
    CHECK(m.rows[0][2] == 2.0);
    CHECK(m.rows[0][3] == doctest::Approx(std::sqrt(2.0)));
    CHECK(m.rows[1][2] == 3.0);
    CHECK(std::isnan(m.rows[1][3]));
    CHECK(m.rows[2][1] == 1.0);
    b.columns = {"episode", "reward"};
    const std::vector<MetricsTable> mismatch{a, b};
    CHECK_THROWS_AS(merge_seed_tables(mismatch), ShapeError);
}

TEST_CASE("compare verdicts") {
    CompareOptions opts;
    opts.metric = "score";
    opts.threshold = 10.0;
    opts.final_window = 2;
    opts.label_a = "uf=100";
    opts.label_b = "uf=500";

    const auto fast = series({{1, {0, 12, 12, 12}}, {2, {0, 0, 11, 11}}, {3, {0, 0, 0, 0}}});
    const auto slow = series({{1, {0, 0, 12, 12}}, {2, {0, 0, 0, 11}}, {3, {11, 11, 11, 11}}, {4, {20, 20}}});
    const auto rep = compare_runs(fast, slow, opts);
    REQUIRE(rep.seeds.size() == 3);
    CHECK(rep.seeds[0].a_reach == 2.0);
    CHECK(rep.seeds[0].b_reach == 3.0);
    CHECK(std::isnan(rep.seeds[2].a_reach));
    CHECK(rep.seeds[2].b_reach == 1.0);
    CHECK(rep.a_reach_wins == 2);
    CHECK(rep.b_reach_wins == 1);
    CHECK(rep.reach_verdict == "uf=100 reaches score >= 10 in fewer episodes");
    CHECK(rep.seeds[0].a_final == 12.0);
    CHECK(rep.seeds[1].b_final == 5.5);
    CHECK(rep.a_final_wins == 1);
    CHECK(rep.b_final_wins == 1);
    CHECK(rep.final_verdict == "tie");
    CHECK(std::isnan(rep.table().rows[2][1]));

    const auto self = compare_runs(fast, fast, opts);
    CHECK(self.reach_verdict == "tie");
    CHECK(self.final_verdict == "tie");

    opts.lower_is_better = true;
    opts.threshold = 0.0;
    const auto low = compare_runs(fast, slow, opts);
    CHECK(low.seeds[0].a_reach == 1.0);
    CHECK(low.seeds[2].final_winner == -1);
    CHECK(low.seeds[1].final_winner == 1);

    opts.metric = "reward";
    CHECK_THROWS_AS(compare_runs(fast, slow, opts), InvalidArgument);
    opts.metric = "score";
    CHECK_THROWS_AS(compare_runs(fast, series({{9, {1}}}), opts), InvalidArgument);
}
