#include "voltpomdp/bql.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "voltpomdp/belief.hpp"
#include "voltpomdp/errors.hpp"
#include "voltpomdp/observation.hpp"

namespace voltpomdp {

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// E[max(x, 0)] for x ~ Normal(m, s^2).
double expected_positive_part(double m, double s) {
    if (!(s > 0.0)) return std::max(m, 0.0);
    const double z = m / s;
    return std::max(0.0, m * normal_cdf(z) + s * normal_pdf(z));  // cancels below zero for z << 0
}

std::pair<std::size_t, std::size_t> top_two(std::span<const double> means) {
    std::size_t a1 = 0;
    for (std::size_t a = 1; a < means.size(); ++a) {
        if (means[a] > means[a1]) a1 = a;
    }
    std::size_t a2 = a1 == 0 ? 1 : 0;
    for (std::size_t a = 0; a < means.size(); ++a) {
        if (a != a1 && means[a] > means[a2]) a2 = a;
    }
    return {a1, a2};
}

double vpi_ranked(std::span<const double> means, std::span<const double> variances, std::size_t a, std::size_t a1,
                  std::size_t a2) {
    const double sigma = std::sqrt(std::max(variances[a], 0.0));
    if (a == a1) return expected_positive_part(means[a2] - means[a], sigma);
    return expected_positive_part(means[a] - means[a1], sigma);
}

}  // namespace

PriorKind parse_prior_kind(std::string_view name) {
    if (name == "zero") return PriorKind::zero;
    if (name == "random") return PriorKind::random;
    if (name == "good") return PriorKind::good;
    if (name == "ill_formed" || name == "ill") return PriorKind::ill_formed;
    throw InvalidArgument("unknown prior '" + std::string(name) + "' (expected zero, random, good, ill_formed)");
}

std::string_view to_string(PriorKind kind) noexcept {
    switch (kind) {
        case PriorKind::zero: return "zero";
        case PriorKind::random: return "random";
        case PriorKind::good: return "good";
        case PriorKind::ill_formed: return "ill_formed";
    }
    return "zero";
}

QPrior make_prior(PriorKind kind, const Discretization& disc, std::uint64_t seed, double variance0,
                  double pseudo_count0) {
    if (!(variance0 > 0.0)) throw InvalidArgument("prior variance must be positive");
    if (!(pseudo_count0 > 0.0)) throw InvalidArgument("prior pseudo-count must be positive");
    QPrior prior;
    prior.n_states = disc.n_states();
    prior.n_actions = disc.n_actions();
    prior.variance0 = variance0;
    prior.pseudo_count0 = pseudo_count0;
    prior.mean.assign(prior.n_states * prior.n_actions, 0.0);

    if (kind == PriorKind::zero) return prior;
    if (kind == PriorKind::random) {
        auto rng = make_rng(seed, 0x9e10);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& m : prior.mean) m = normal(rng);
        return prior;
    }

    const double mid = (disc.action_levels - 1) / 2.0;
    std::vector<double> action_offset(prior.n_actions);  // in [-1, 1], > 0 raises the setpoints
    for (std::size_t a = 0; a < prior.n_actions; ++a) {
        action_offset[a] = (mean_setpoint_level(decode_action(a, disc)) - mid) / mid;
    }
    const double half_band = (kBandHigh - kBandLow) / 2.0;
    for (std::size_t s = 0; s < prior.n_states; ++s) {
        const auto state = decode_state(s, disc);
        double v = 0.0;
        for (int level : state.levels) v += disc.level_midpoint(level);
        v /= static_cast<double>(state.levels.size());
        // Corrective offset: full raise at the bottom of the band, full cut at the top.
        double target = std::clamp((1.0 - v) / half_band, -1.0, 1.0);
        if (kind == PriorKind::ill_formed) target = -target;
        for (std::size_t a = 0; a < prior.n_actions; ++a) {
            prior.mean[s * prior.n_actions + a] = std::max(-50.0, 50.0 - 200.0 * std::abs(action_offset[a] - target));
        }
    }
    return prior;
}

QPosterior::QPosterior(const QPrior& prior, double variance_min)
    : n_states_(prior.n_states),
      n_actions_(prior.n_actions),
      variance0_(prior.variance0),
      n0_(prior.pseudo_count0),
      var_min_(variance_min),
      mean_(prior.mean),
      count_(prior.mean.size(), prior.pseudo_count0) {
    if (mean_.size() != n_states_ * n_actions_) throw ShapeError("prior mean table has the wrong size");
    if (!(variance0_ > 0.0) || !(n0_ > 0.0)) throw InvalidArgument("prior variance and pseudo-count must be positive");
}

std::size_t QPosterior::at(std::size_t s, std::size_t a) const {
    if (s >= n_states_ || a >= n_actions_) throw InvalidArgument("state/action index out of range");
    return s * n_actions_ + a;
}

double QPosterior::variance(std::size_t s, std::size_t a) const {
    return std::max(variance0_ * n0_ / count_[at(s, a)], var_min_);
}

std::span<const double> QPosterior::means(std::size_t s) const {
    return std::span<const double>(mean_).subspan(at(s, 0), n_actions_);
}

std::vector<double> QPosterior::variances(std::size_t s) const {
    std::vector<double> v(n_actions_);
    for (std::size_t a = 0; a < n_actions_; ++a) v[a] = variance(s, a);
    return v;
}

void QPosterior::update(std::size_t s, std::size_t a, double target) {
    if (!std::isfinite(target)) throw InvalidArgument("posterior target must be finite");
    const auto i = at(s, a);
    const double n = count_[i];
    mean_[i] = (n * mean_[i] + target) / (n + 1.0);
    count_[i] = n + 1.0;
}

void QPosterior::set(std::size_t s, std::size_t a, double mean, double count) {
    if (!(count >= n0_)) throw InvalidArgument("pseudo-count below the prior count");
    const auto i = at(s, a);
    mean_[i] = mean;
    count_[i] = count;
}

void update_posterior(QPosterior& posterior, std::size_t s, std::size_t a, double target) {
    posterior.update(s, a, target);
}

std::size_t select_action_greedy(std::span<const double> means) {
    if (means.empty()) throw InvalidArgument("no actions to select from");
    std::size_t best = 0;
    for (std::size_t a = 1; a < means.size(); ++a) {
        if (means[a] > means[best]) best = a;
    }
    return best;
}

std::size_t select_action_qsample(std::span<const double> means, std::span<const double> variances, Rng& rng) {
    if (means.empty() || means.size() != variances.size()) throw ShapeError("means/variances mismatch");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t best = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < means.size(); ++a) {
        const double q = means[a] + std::sqrt(std::max(variances[a], 0.0)) * normal(rng);
        if (q > best_q) {
            best_q = q;
            best = a;
        }
    }
    return best;
}

double vpi(std::span<const double> means, std::span<const double> variances, std::size_t a) {
    if (means.size() < 2) throw InvalidArgument("VPI needs at least two actions");
    if (means.size() != variances.size()) throw ShapeError("means/variances mismatch");
    if (a >= means.size()) throw InvalidArgument("action index out of range");
    const auto [a1, a2] = top_two(means);
    return vpi_ranked(means, variances, a, a1, a2);
}

std::size_t select_action_vpi(std::span<const double> means, std::span<const double> variances) {
    if (means.size() < 2) return select_action_greedy(means);
    if (means.size() != variances.size()) throw ShapeError("means/variances mismatch");
    const auto [a1, a2] = top_two(means);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < means.size(); ++a) {
        const double score = means[a] + vpi_ranked(means, variances, a, a1, a2);
        if (score > best_score) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

std::size_t select_action_greedy(const QPosterior& posterior, std::size_t s) {
    return select_action_greedy(posterior.means(s));
}

std::size_t select_action_qsample(const QPosterior& posterior, std::size_t s, Rng& rng) {
    return select_action_qsample(posterior.means(s), posterior.variances(s), rng);
}

std::size_t select_action_vpi(const QPosterior& posterior, std::size_t s) {
    return select_action_vpi(posterior.means(s), posterior.variances(s));
}

double vpi(const QPosterior& posterior, std::size_t s, std::size_t a) {
    return vpi(posterior.means(s), posterior.variances(s), a);
}

Exploration parse_exploration(std::string_view name) {
    if (name == "qsample" || name == "q_value_sampling") return Exploration::qsample;
    if (name == "greedy") return Exploration::greedy;
    if (name == "vpi") return Exploration::vpi;
    throw InvalidArgument("unknown exploration '" + std::string(name) + "' (expected qsample, greedy, vpi)");
}

std::string_view to_string(Exploration e) noexcept {
    switch (e) {
        case Exploration::qsample: return "qsample";
        case Exploration::greedy: return "greedy";
        case Exploration::vpi: return "vpi";
    }
    return "vpi";
}

MetricsTable BqlResult::table() const {
    MetricsTable t;
    t.columns = {"episode", "score", "episode_len", "goal", "rolling_avg_50", "rolling_len_50", "wall_ms"};
    std::vector<double> scores, lengths;
    for (const auto& e : episodes) {
        scores.push_back(e.score);
        lengths.push_back(e.length);
    }
    const auto avg = rolling_mean(scores, 50);
    const auto len = rolling_mean(lengths, 50);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const auto& e = episodes[i];
        t.rows.push_back({static_cast<double>(e.episode), e.score, static_cast<double>(e.length),
                          e.reached_goal ? 1.0 : 0.0, avg[i], len[i], e.wall_ms});
    }
    return t;
}

BqlResult train_bql(VoltageControlEnv& env, const BqlConfig& cfg, std::uint64_t seed) {
    if (cfg.episodes < 1) throw InvalidArgument("episodes must be positive");
    if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
    const auto& disc = env.discretization();
    QPosterior posterior(make_prior(cfg.prior, disc, seed, cfg.variance0, cfg.pseudo_count0), cfg.variance_min);
    auto rng = make_rng(seed, 1);
    BeliefTracker tracker(disc, env.config().observation);

    BqlResult result{{}, posterior};
    auto& q = result.posterior;

    auto select = [&](std::size_t s) {
        switch (cfg.exploration) {
            case Exploration::qsample: return select_action_qsample(q, s, rng);
            case Exploration::greedy: return select_action_greedy(q, s);
            case Exploration::vpi: return select_action_vpi(q, s);
        }
        return std::size_t{0};
    };

    bool first = true;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = first ? env.reset(seed) : env.reset();
        first = false;
        std::size_t s = 0;
        if (cfg.state_mode == BqlStateMode::belief_map) {
            tracker.reset(r.observation);
            s = encode(tracker.map_state(), disc);
        } else {
            s = encode(r.observation, disc);
        }
        BqlEpisode log;
        log.episode = ep;
        while (!r.done) {
            const auto a = select(s);
            r = env.step(a);
            std::size_t s_next = s;
            if (r.reason != TerminalReason::diverged) {
                if (cfg.state_mode == BqlStateMode::belief_map) {
                    tracker.update(a, r.observation);
                    s_next = encode(tracker.map_state(), disc);
                } else {
                    s_next = encode(r.observation, disc);
                }
            }
            const bool terminal = r.reason == TerminalReason::goal || r.reason == TerminalReason::diverged;
            double target = r.reward;
            if (!terminal) {
                const auto row = q.means(s_next);
                target += cfg.gamma * *std::max_element(row.begin(), row.end());
            }
            q.update(s, a, target);
            log.score += r.reward;
            ++log.length;
            s = s_next;
        }
        log.reached_goal = r.reason == TerminalReason::goal;
        if (cfg.record_wall_time) {
            log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        result.episodes.push_back(log);
    }
    return result;
}

std::string posterior_to_json(const QPosterior& posterior) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t s = 0; s < posterior.n_states(); ++s) {
        for (std::size_t a = 0; a < posterior.n_actions(); ++a) {
            arr.push_back({s, a, posterior.mean(s, a), posterior.variance(s, a), posterior.count(s, a)});
        }
    }
    return arr.dump();
}

QPosterior posterior_from_json(std::string_view text, double variance0, double pseudo_count0, double variance_min) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 0);
    }
    if (!arr.is_array()) throw ParseError("checkpoint must be a JSON array", 0);
    std::size_t n_states = 0, n_actions = 0;
    for (const auto& row : arr) {
        if (!row.is_array() || row.size() != 5) throw ParseError("checkpoint rows must have 5 entries", 0);
        n_states = std::max(n_states, row[0].get<std::size_t>() + 1);
        n_actions = std::max(n_actions, row[1].get<std::size_t>() + 1);
    }
    QPrior prior;
    prior.n_states = n_states;
    prior.n_actions = n_actions;
    prior.mean.assign(n_states * n_actions, 0.0);
    prior.variance0 = variance0;
    prior.pseudo_count0 = pseudo_count0;
    QPosterior post(prior, variance_min);
    for (const auto& row : arr) {
        post.set(row[0].get<std::size_t>(), row[1].get<std::size_t>(), row[2].get<double>(), row[4].get<double>());
    }
    return post;
}

void write_heatmap_csv(std::ostream& out, const QPosterior& posterior) {
    out << "state";
    for (std::size_t a = 0; a < posterior.n_actions(); ++a) out << ",a" << a;
    out << '\n';
    for (std::size_t s = 0; s < posterior.n_states(); ++s) {
        out << s;
        for (std::size_t a = 0; a < posterior.n_actions(); ++a) out << ',' << format_number(posterior.mean(s, a));
        out << '\n';
    }
}

}  // namespace voltpomdp
