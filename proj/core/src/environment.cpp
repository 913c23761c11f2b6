#include "voltpomdp/environment.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "voltpomdp/case_io.hpp"
#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

using nlohmann::json;

const std::set<std::string> kEnvKeys = {
    "case_file", "n_levels", "monitored_buses", "action_levels", "t_p", "r_p_inside", "r_p_outside", "e_max",
    "load_scale_range", "reward_model", "topology_perturb_prob", "seed", "terminate_on_goal"};

template <typename T>
T get_as(const json& doc, const char* key, bool (json::*is)() const noexcept, const char* what) {
    const auto& v = doc.at(key);
    if (!(v.*is)()) throw InvalidArgument(std::string("env.") + key + " must be " + what);
    return v.get<T>();
}

constexpr int kMaxResetAttempts = 100;

}  // namespace

void EnvConfig::validate() const {
    if (case_file.empty()) throw InvalidArgument("env.case_file is required");
    if (n_levels < 2) throw InvalidArgument("env.n_levels must be >= 2");
    if (action_levels < 2) throw InvalidArgument("env.action_levels must be >= 2");
    if (e_max < 1) throw InvalidArgument("env.e_max must be >= 1");
    if (!(load_scale_range[0] > 0.0) || load_scale_range[1] < load_scale_range[0]) {
        throw InvalidArgument("env.load_scale_range must be [lo, hi] with 0 < lo <= hi");
    }
    if (!(topology_perturb_prob >= 0.0 && topology_perturb_prob <= 1.0)) {
        throw InvalidArgument("env.topology_perturb_prob must lie in [0, 1]");
    }
    try {
        observation.validate();
    } catch (const InvalidModel& e) {
        throw InvalidArgument(std::string("env observation model: ") + e.what());
    }
}

EnvConfig parse_env_config(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text.begin(), json_text.end());
    } catch (const json::parse_error& e) {
        throw InvalidArgument(std::string("env config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw InvalidArgument("env config must be a JSON object");
    for (const auto& [key, _] : doc.items()) {
        if (!kEnvKeys.count(key)) throw InvalidArgument("env." + key + " is not a recognized key");
    }

    EnvConfig cfg;
    if (!doc.contains("case_file")) throw InvalidArgument("env.case_file is required");
    cfg.case_file = get_as<std::string>(doc, "case_file", &json::is_string, "a string");
    if (doc.contains("n_levels")) cfg.n_levels = get_as<int>(doc, "n_levels", &json::is_number_integer, "an integer");
    if (doc.contains("action_levels")) {
        cfg.action_levels = get_as<int>(doc, "action_levels", &json::is_number_integer, "an integer");
    }
    if (doc.contains("monitored_buses")) {
        const auto& m = doc["monitored_buses"];
        if (!m.is_array()) throw InvalidArgument("env.monitored_buses must be an array of bus ids");
        for (const auto& id : m) {
            if (!id.is_number_integer()) throw InvalidArgument("env.monitored_buses must be an array of bus ids");
            cfg.monitored_buses.push_back(id.get<int>());
        }
    }
    if (doc.contains("t_p")) cfg.observation.t_p = get_as<double>(doc, "t_p", &json::is_number, "a number");
    if (doc.contains("r_p_inside")) {
        cfg.observation.r_p_inside = get_as<double>(doc, "r_p_inside", &json::is_number, "a number");
    }
    if (doc.contains("r_p_outside")) {
        cfg.observation.r_p_outside = get_as<double>(doc, "r_p_outside", &json::is_number, "a number");
    }
    if (doc.contains("e_max")) cfg.e_max = get_as<int>(doc, "e_max", &json::is_number_integer, "an integer");
    if (doc.contains("load_scale_range")) {
        const auto& r = doc["load_scale_range"];
        if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number()) {
            throw InvalidArgument("env.load_scale_range must be [lo, hi]");
        }
        cfg.load_scale_range = {r[0].get<double>(), r[1].get<double>()};
    }
    if (doc.contains("reward_model")) {
        const auto m = get_as<std::string>(doc, "reward_model", &json::is_string, "a string");
        if (m == "step") {
            cfg.reward_model = RewardModel::step;
        } else if (m == "pomdp") {
            cfg.reward_model = RewardModel::pomdp;
        } else {
            throw InvalidArgument("env.reward_model must be \"step\" or \"pomdp\" (got \"" + m + "\")");
        }
    }
    if (doc.contains("topology_perturb_prob")) {
        cfg.topology_perturb_prob = get_as<double>(doc, "topology_perturb_prob", &json::is_number, "a number");
    }
    if (doc.contains("seed")) {
        cfg.seed = get_as<std::uint64_t>(doc, "seed", &json::is_number_unsigned, "a non-negative integer");
    }
    if (doc.contains("terminate_on_goal")) {
        cfg.terminate_on_goal = get_as<bool>(doc, "terminate_on_goal", &json::is_boolean, "a boolean");
    }
    cfg.validate();
    return cfg;
}

std::string to_json(const EnvConfig& cfg) {
    json doc;
    doc["case_file"] = cfg.case_file;
    doc["n_levels"] = cfg.n_levels;
    doc["monitored_buses"] = cfg.monitored_buses;
    doc["action_levels"] = cfg.action_levels;
    doc["t_p"] = cfg.observation.t_p;
    doc["r_p_inside"] = cfg.observation.r_p_inside;
    doc["r_p_outside"] = cfg.observation.r_p_outside;
    doc["e_max"] = cfg.e_max;
    doc["load_scale_range"] = cfg.load_scale_range;
    doc["reward_model"] = cfg.reward_model == RewardModel::step ? "step" : "pomdp";
    doc["topology_perturb_prob"] = cfg.topology_perturb_prob;
    doc["seed"] = cfg.seed;
    doc["terminate_on_goal"] = cfg.terminate_on_goal;
    return doc.dump(2);
}

std::filesystem::path resolve_case_path(const EnvConfig& cfg, const std::filesystem::path& base_dir) {
    const std::filesystem::path p(cfg.case_file);
    if (p.is_absolute()) return p;
    if (!base_dir.empty()) {
        auto candidate = base_dir / p;
        if (std::filesystem::exists(candidate)) return candidate;
    }
    return p;
}

std::string_view to_string(TerminalReason reason) noexcept {
    switch (reason) {
        case TerminalReason::none: return "none";
        case TerminalReason::goal: return "goal";
        case TerminalReason::timeout: return "timeout";
        case TerminalReason::diverged: return "diverged";
    }
    return "none";
}

VoltageControlEnv::VoltageControlEnv(GridCase grid, EnvConfig cfg)
    : grid_(std::move(grid)), active_grid_(grid_), cfg_(std::move(cfg)) {
    if (cfg_.case_file.empty()) cfg_.case_file = grid_.name;
    cfg_.validate();
    validate(grid_);

    if (cfg_.monitored_buses.empty()) {
        for (const auto& b : grid_.buses) {
            if (b.type == BusType::pq && b.base_load_p > 0.0) cfg_.monitored_buses.push_back(b.id);
        }
    }
    for (int id : cfg_.monitored_buses) monitored_index_.push_back(grid_.bus_index(id));

    disc_.n_levels = cfg_.n_levels;
    disc_.monitored_buses = cfg_.monitored_buses;
    disc_.action_levels = cfg_.action_levels;
    disc_.n_generators = static_cast<int>(grid_.generators.size());
    disc_.validate();
    n_actions_ = disc_.n_actions();

    outage_candidates_ = non_islanding_branches(grid_);
    ybus_ = build_admittance(grid_);
}

VoltageControlEnv VoltageControlEnv::from_config(const EnvConfig& cfg, const std::filesystem::path& base_dir) {
    return VoltageControlEnv(load_case(resolve_case_path(cfg, base_dir)), cfg);
}

std::size_t VoltageControlEnv::neutral_action() const {
    DiscreteAction a;
    a.setpoint_levels.assign(static_cast<std::size_t>(disc_.n_generators), (disc_.action_levels - 1) / 2);
    return encode(a, disc_);
}

PowerFlowSolution VoltageControlEnv::solve(const DiscreteAction& action) const {
    const auto sp = setpoints(action, disc_);
    return solve_power_flow(active_grid_, ybus_, sp, load_scale_);
}

StepResult VoltageControlEnv::reset() {
    if (!seeded_) return reset(cfg_.seed);
    std::uniform_real_distribution<double> scale(cfg_.load_scale_range[0], cfg_.load_scale_range[1]);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_action(0, n_actions_ - 1);

    for (int attempt = 0; attempt < kMaxResetAttempts; ++attempt) {
        load_scale_.clear();
        for (const auto& b : grid_.buses) load_scale_[b.id] = scale(rng_);

        active_grid_ = grid_;
        removed_branch_.reset();
        if (cfg_.topology_perturb_prob > 0.0 && !outage_candidates_.empty() &&
            unif(rng_) < cfg_.topology_perturb_prob) {
            std::uniform_int_distribution<std::size_t> pick(0, outage_candidates_.size() - 1);
            const auto k = outage_candidates_[pick(rng_)];
            active_grid_.branches.erase(active_grid_.branches.begin() + static_cast<std::ptrdiff_t>(k));
            removed_branch_ = k;
        }
        ybus_ = build_admittance(active_grid_);

        const auto sol = solve(decode_action(pick_action(rng_), disc_));
        if (!sol.converged) continue;
        steps_ = 0;
        done_ = false;
        started_ = true;
        return observe(sol, true);
    }
    throw Diverged("could not find a solvable initial operating point");
}

StepResult VoltageControlEnv::reset(std::uint64_t seed) {
    rng_ = make_rng(seed);
    seeded_ = true;
    return reset();
}

StepResult VoltageControlEnv::step(std::size_t action_index) { return step(decode_action(action_index, disc_)); }

StepResult VoltageControlEnv::step(const DiscreteAction& action) {
    if (!started_ || done_) throw EpisodeFinished();
    (void)encode(action, disc_);  // range check
    ++steps_;
    const auto sol = solve(action);
    if (!sol.converged) {
        StepResult r = last_;
        r.reward = kDivergencePenalty;
        r.done = true;
        r.reason = TerminalReason::diverged;
        r.step = steps_;
        r.info.converged = false;
        r.info.reward_orig = kDivergencePenalty;
        done_ = true;
        last_ = r;
        return r;
    }
    return observe(sol, false);
}

StepResult VoltageControlEnv::observe(const PowerFlowSolution& sol, bool initial) {
    StepResult r;
    r.step = steps_;
    r.info.converged = true;
    r.info.bus_voltages = sol.bus_voltages;
    for (auto i : monitored_index_) r.info.monitored_voltages.push_back(sol.bus_voltages[i]);
    r.true_state = discretize(r.info.monitored_voltages, disc_);
    r.observation = sample_observation(r.true_state, cfg_.observation, disc_, rng_);
    r.info.n_violations = count_violations(r.info.monitored_voltages);
    r.info.confidence = observation_likelihood(r.observation, r.true_state, cfg_.observation, disc_);
    r.info.reward_orig = step_reward(r.info.n_violations);

    if (initial) {
        r.reward = 0.0;
    } else {
        r.reward = cfg_.reward_model == RewardModel::step ? r.info.reward_orig
                                                           : pomdp_reward(r.info.confidence, r.info.reward_orig);
        if (r.info.n_violations == 0 && cfg_.terminate_on_goal) {
            r.done = true;
            r.reason = TerminalReason::goal;
        } else if (steps_ >= cfg_.e_max) {
            r.done = true;
            r.reason = TerminalReason::timeout;
        }
    }
    done_ = r.done;
    last_ = r;
    return r;
}

}  // namespace voltpomdp
