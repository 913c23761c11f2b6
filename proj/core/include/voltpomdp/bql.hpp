#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voltpomdp/discretization.hpp"
#include "voltpomdp/environment.hpp"
#include "voltpomdp/metrics.hpp"
#include "voltpomdp/random.hpp"

namespace voltpomdp {

enum class PriorKind { zero, random, good, ill_formed };
PriorKind parse_prior_kind(std::string_view name);
std::string_view to_string(PriorKind kind) noexcept;

struct QPrior {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> mean;  // row-major [state][action]
    double variance0 = 100.0;
    double pseudo_count0 = 1.0;
};

// zero: all means 0. random: i.i.d. Normal(0, 1).
// good / ill_formed: a band of +50 along a diagonal of the state-action plane,
// -50 elsewhere. For a state whose mean level midpoint is v, the good prior
// peaks at the action whose mean setpoint offset (in [-1, 1]) is
// clamp((1 - v) / 0.05, -1, 1): low voltages favour raising the setpoints and
// high voltages favour lowering them. ill_formed peaks at the negated offset.
// mean = max(-50, 50 - 200 * |offset(a) - peak(s)|).
QPrior make_prior(PriorKind kind, const Discretization& disc, std::uint64_t seed, double variance0 = 100.0,
                  double pseudo_count0 = 1.0);

// Independent Normal posterior over Q(s, a) for every state-action pair.
class QPosterior {
public:
    explicit QPosterior(const QPrior& prior, double variance_min = 1e-4);

    std::size_t n_states() const noexcept { return n_states_; }
    std::size_t n_actions() const noexcept { return n_actions_; }

    double mean(std::size_t s, std::size_t a) const { return mean_[at(s, a)]; }
    double variance(std::size_t s, std::size_t a) const;
    double count(std::size_t s, std::size_t a) const { return count_[at(s, a)]; }
    std::span<const double> means(std::size_t s) const;
    std::vector<double> variances(std::size_t s) const;

    double variance0() const noexcept { return variance0_; }
    double pseudo_count0() const noexcept { return n0_; }
    double variance_min() const noexcept { return var_min_; }

    // Conjugate update: mu <- (n mu + q) / (n + 1), n <- n + 1,
    // variance = variance0 * n0 / n floored at variance_min.
    void update(std::size_t s, std::size_t a, double target);

    // Direct write used when restoring checkpoints.
    void set(std::size_t s, std::size_t a, double mean, double count);

private:
    std::size_t at(std::size_t s, std::size_t a) const;

    std::size_t n_states_;
    std::size_t n_actions_;
    double variance0_;
    double n0_;
    double var_min_;
    std::vector<double> mean_;
    std::vector<double> count_;
};

void update_posterior(QPosterior& posterior, std::size_t s, std::size_t a, double target);

// Row-level selection rules; ties go to the lowest action index.
std::size_t select_action_greedy(std::span<const double> means);
std::size_t select_action_qsample(std::span<const double> means, std::span<const double> variances, Rng& rng);
std::size_t select_action_vpi(std::span<const double> means, std::span<const double> variances);

// Myopic value of perfect information for action a. With a1 the best and a2
// the runner-up by mean and q ~ Normal(mu_a, var_a):
//   a == a1: E[max(mu_a2 - q, 0)]
//   a != a1: E[max(q - mu_a1, 0)]
// Throws InvalidArgument for fewer than two actions.
double vpi(std::span<const double> means, std::span<const double> variances, std::size_t a);

std::size_t select_action_greedy(const QPosterior& posterior, std::size_t s);
std::size_t select_action_qsample(const QPosterior& posterior, std::size_t s, Rng& rng);
std::size_t select_action_vpi(const QPosterior& posterior, std::size_t s);
double vpi(const QPosterior& posterior, std::size_t s, std::size_t a);

enum class Exploration { qsample, greedy, vpi };
Exploration parse_exploration(std::string_view name);
std::string_view to_string(Exploration e) noexcept;

enum class BqlStateMode { observed, belief_map };

struct BqlConfig {
    Exploration exploration = Exploration::vpi;
    PriorKind prior = PriorKind::ill_formed;
    double gamma = 0.99;
    double variance0 = 100.0;
    double pseudo_count0 = 1.0;
    double variance_min = 1e-4;
    int episodes = 5000;
    BqlStateMode state_mode = BqlStateMode::observed;
    bool record_wall_time = false;
};

struct BqlEpisode {
    int episode = 0;
    double score = 0.0;
    int length = 0;
    bool reached_goal = false;
    double wall_ms = 0.0;
};

struct BqlResult {
    std::vector<BqlEpisode> episodes;
    QPosterior posterior;

    // episode, score, episode_len, goal, rolling_avg_50 (score), rolling_len_50, wall_ms
    MetricsTable table() const;
};

// Episodic training. The bootstrap target is r + gamma * max_a' mu(s', a'),
// with no bootstrap on goal or divergence.
BqlResult train_bql(VoltageControlEnv& env, const BqlConfig& cfg, std::uint64_t seed);

// JSON array of [state_index, action_index, mean, variance, count].
std::string posterior_to_json(const QPosterior& posterior);
QPosterior posterior_from_json(std::string_view text, double variance0 = 100.0, double pseudo_count0 = 1.0,
                               double variance_min = 1e-4);

// Posterior means, one row per state and one column per action.
void write_heatmap_csv(std::ostream& out, const QPosterior& posterior);

}  // namespace voltpomdp
