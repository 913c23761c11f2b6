#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "voltpomdp/discretization.hpp"
#include "voltpomdp/grid.hpp"
#include "voltpomdp/observation.hpp"
#include "voltpomdp/power_flow.hpp"
#include "voltpomdp/random.hpp"

namespace voltpomdp {

enum class RewardModel { step, pomdp };

struct EnvConfig {
    std::string case_file;
    int n_levels = 20;
    std::vector<int> monitored_buses;  // empty: every PQ bus carrying load
    int action_levels = 5;
    ObservationModel observation;
    int e_max = 10;
    std::array<double, 2> load_scale_range{0.8, 1.2};
    RewardModel reward_model = RewardModel::step;
    double topology_perturb_prob = 0.0;
    std::uint64_t seed = 0;
    // When false, reaching n_v = 0 does not end the episode; it then runs e_max steps.
    bool terminate_on_goal = true;

    void validate() const;
};

// Parses the environment JSON object. Unknown keys are rejected. Throws
// InvalidArgument naming the offending key.
EnvConfig parse_env_config(std::string_view json_text);
std::string to_json(const EnvConfig& cfg);

// Relative case paths resolve against `base_dir` first, then the working directory.
std::filesystem::path resolve_case_path(const EnvConfig& cfg, const std::filesystem::path& base_dir);

inline constexpr double kDivergencePenalty = -500.0;

enum class TerminalReason { none, goal, timeout, diverged };
std::string_view to_string(TerminalReason reason) noexcept;

struct StepInfo {
    int n_violations = 0;
    bool converged = true;
    std::vector<double> monitored_voltages;  // p.u., true values
    std::vector<double> bus_voltages;        // p.u., every bus
    double confidence = 1.0;                 // Omega(o | s) over all monitored buses
    double reward_orig = 0.0;
};

struct StepResult {
    DiscreteState observation;
    DiscreteState true_state;
    double reward = 0.0;
    bool done = false;
    TerminalReason reason = TerminalReason::none;
    int step = 0;
    StepInfo info;
};

// Voltage-control POMDP on top of a grid case. Single-threaded; construct one
// instance per worker.
class VoltageControlEnv {
public:
    VoltageControlEnv(GridCase grid, EnvConfig cfg);

    // Loads the case referenced by cfg.case_file (resolved against base_dir).
    static VoltageControlEnv from_config(const EnvConfig& cfg, const std::filesystem::path& base_dir = {});

    // Starts an episode: draws load scales, optionally drops one branch, applies
    // a uniformly random action and observes. reset(seed) reseeds the episode
    // generator; reset() continues the current stream (the first call uses cfg.seed).
    StepResult reset();
    StepResult reset(std::uint64_t seed);

    StepResult step(const DiscreteAction& action);
    StepResult step(std::size_t action_index);

    const Discretization& discretization() const noexcept { return disc_; }
    const EnvConfig& config() const noexcept { return cfg_; }
    const GridCase& grid() const noexcept { return grid_; }
    std::size_t n_actions() const noexcept { return n_actions_; }
    std::size_t n_states() const { return disc_.n_states(); }

    bool done() const noexcept { return done_; }
    int steps_taken() const noexcept { return steps_; }
    const LoadScale& load_scale() const noexcept { return load_scale_; }
    std::optional<std::size_t> removed_branch() const noexcept { return removed_branch_; }

    // Index of the all-levels-equal action closest to the middle of the setpoint range.
    std::size_t neutral_action() const;

private:
    StepResult observe(const PowerFlowSolution& sol, bool initial);
    PowerFlowSolution solve(const DiscreteAction& action) const;

    GridCase grid_;
    GridCase active_grid_;
    EnvConfig cfg_;
    Discretization disc_;
    std::size_t n_actions_ = 0;
    std::vector<std::size_t> monitored_index_;
    std::vector<std::size_t> outage_candidates_;
    Eigen::MatrixXcd ybus_;
    Rng rng_;
    bool seeded_ = false;
    LoadScale load_scale_;
    std::optional<std::size_t> removed_branch_;
    int steps_ = 0;
    bool done_ = true;
    bool started_ = false;
    StepResult last_;
};

}  // namespace voltpomdp
