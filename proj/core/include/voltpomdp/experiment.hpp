#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "voltpomdp/bac.hpp"
#include "voltpomdp/bql.hpp"
#include "voltpomdp/dqn.hpp"
#include "voltpomdp/environment.hpp"
#include "voltpomdp/errors.hpp"
#include "voltpomdp/metrics.hpp"

namespace voltpomdp {

enum class AgentKind { bql, dqn, bdqn, bac };
AgentKind parse_agent_kind(std::string_view name);  // throws InvalidArgument listing the valid names
std::string_view to_string(AgentKind kind) noexcept;
std::span<const std::string_view> agent_names() noexcept;

using AgentParams = std::variant<BqlConfig, DqnConfig, BacConfig>;

// Every schema problem found in a config, one message per entry.
class ConfigError : public InvalidArgument {
public:
    explicit ConfigError(std::vector<std::string> diagnostics);
    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

struct Variant {
    std::string name;
    AgentKind agent = AgentKind::bql;
    EnvConfig env;
    AgentParams params;
};

// Top level: name, agent, env, params, seeds, output_dir and optional
// variants. Each variant may override agent and patch env and params.
// Without variants the experiment has a single variant named "default".
struct ExperimentConfig {
    std::string name;
    std::string description;
    std::vector<std::uint64_t> seeds;
    std::string output_dir;
    std::vector<Variant> variants;
};

// Throws ConfigError. Relative case files resolve against base_dir and are
// stored as absolute paths. A run manifest is accepted in place of a config.
ExperimentConfig parse_experiment(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Fully resolved JSON (every default spelled out, variants expanded).
std::string to_json(const ExperimentConfig& cfg);

// Per-agent parameter blocks with defaults; unknown keys are diagnostics.
AgentParams parse_agent_params(AgentKind agent, std::string_view json_text);
std::string params_to_json(const AgentParams& params);

// Trains one variant for one seed and returns its metrics table.
MetricsTable run_variant(const Variant& variant, std::uint64_t seed);

// Per-index mean and sample standard deviation across seed tables. The first
// column is the index; the output has <index>, n, then <col>_mean, <col>_std
// for every other column. NaN cells are skipped.
MetricsTable merge_seed_tables(std::span<const MetricsTable> tables);

// Seed tables stacked with a leading seed column.
MetricsTable stack_seed_tables(std::span<const std::uint64_t> seeds, std::span<const MetricsTable> tables);

// Worker count: VOLTPOMDP_THREADS when set to a positive integer, otherwise
// the hardware concurrency, never more than `jobs`.
unsigned worker_count(std::size_t jobs);

struct RunOutput {
    std::filesystem::path manifest;
    std::vector<std::filesystem::path> files;
};

// Writes <out>/<variant>/seed_<s>.csv, runs.csv and merged.csv plus
// <out>/manifest.json. Seeds run in parallel (worker_count).
RunOutput run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

std::string library_version();

struct CompareOptions {
    std::string metric;
    double threshold = 0.0;
    bool lower_is_better = false;  // threshold reached when metric <= threshold
    std::size_t final_window = 50;
    std::string label_a = "a";
    std::string label_b = "b";
};

struct SeedComparison {
    std::uint64_t seed = 0;
    double a_reach = kMissing;  // rows up to and including the first reaching the threshold, NaN if never
    double b_reach = kMissing;
    double a_final = kMissing;  // mean of the metric over the last final_window rows
    double b_final = kMissing;
    int reach_winner = 0;  // -1 a, +1 b, 0 tie
    int final_winner = 0;
};

struct CompareReport {
    std::vector<SeedComparison> seeds;
    int a_reach_wins = 0, b_reach_wins = 0;
    int a_final_wins = 0, b_final_wins = 0;
    std::string reach_verdict;
    std::string final_verdict;

    MetricsTable table() const;
};

// Tables with a seed column are compared seed by seed over the seeds present
// in both; otherwise each file is one series. Throws InvalidArgument when the
// metric is missing or no seeds are shared.
CompareReport compare_runs(const MetricsTable& a, const MetricsTable& b, const CompareOptions& opts);

}  // namespace voltpomdp
