#include "voltpomdp/observation.hpp"

#include <cstdlib>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void ObservationModel::validate() const {
    if (!is_probability(t_p) || !is_probability(r_p_inside) || !is_probability(r_p_outside)) {
        throw InvalidModel("t_p and r_p must lie in [0, 1]");
    }
    if (t_p + r_p_inside > 1.0 + 1e-12 || t_p + r_p_outside > 1.0 + 1e-12) {
        throw InvalidModel("t_p + r_p must not exceed 1");
    }
    if (r_p_inside < r_p_outside) throw InvalidModel("r_p_inside must be >= r_p_outside");
}

double ObservationModel::residual(int level, const Discretization& disc) const {
    const double mid = disc.level_midpoint(level);
    return (mid > kBandLow && mid < kBandHigh) ? r_p_inside : r_p_outside;
}

std::vector<double> observation_distribution(int true_level, const ObservationModel& model,
                                             const Discretization& disc) {
    model.validate();
    const int n = disc.n_levels;
    if (true_level < 0 || true_level >= n) throw InvalidArgument("true level out of range");

    const double r = model.residual(true_level, disc);
    const double neighbour = (1.0 - model.t_p - r) / 2.0;

    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    dist[static_cast<std::size_t>(true_level)] = model.t_p;

    std::vector<int> neighbours, others;
    for (int o = 0; o < n; ++o) {
        if (o == true_level) continue;
        (std::abs(o - true_level) == 1 ? neighbours : others).push_back(o);
    }
    double pool = r + neighbour * static_cast<double>(2 - neighbours.size());
    if (others.empty()) {
        // Too few levels for a residual region: the pool goes to the neighbours.
        for (int o : neighbours) dist[static_cast<std::size_t>(o)] = neighbour + pool / static_cast<double>(neighbours.size());
        return dist;
    }
    for (int o : neighbours) dist[static_cast<std::size_t>(o)] = neighbour;
    const double share = pool / static_cast<double>(others.size());
    for (int o : others) dist[static_cast<std::size_t>(o)] = share;
    return dist;
}

double observation_prob(int observed_level, int true_level, const ObservationModel& model,
                        const Discretization& disc) {
    if (observed_level < 0 || observed_level >= disc.n_levels) throw InvalidArgument("observed level out of range");
    return observation_distribution(true_level, model, disc)[static_cast<std::size_t>(observed_level)];
}

std::vector<std::vector<double>> observation_table(const ObservationModel& model, const Discretization& disc) {
    std::vector<std::vector<double>> table;
    table.reserve(static_cast<std::size_t>(disc.n_levels));
    for (int s = 0; s < disc.n_levels; ++s) table.push_back(observation_distribution(s, model, disc));
    return table;
}

double observation_likelihood(const DiscreteState& observed, const DiscreteState& truth,
                              const ObservationModel& model, const Discretization& disc) {
    if (observed.levels.size() != truth.levels.size()) throw ShapeError("observation/state size mismatch");
    double p = 1.0;
    for (std::size_t i = 0; i < truth.levels.size(); ++i) {
        p *= observation_prob(observed.levels[i], truth.levels[i], model, disc);
    }
    return p;
}

DiscreteState sample_observation(const DiscreteState& truth, const ObservationModel& model,
                                 const Discretization& disc, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    DiscreteState obs;
    obs.levels.reserve(truth.levels.size());
    for (int level : truth.levels) {
        const auto dist = observation_distribution(level, model, disc);
        const double u = unif(rng);
        double acc = 0.0;
        int pick = disc.n_levels - 1;
        for (int o = 0; o < disc.n_levels; ++o) {
            acc += dist[static_cast<std::size_t>(o)];
            if (u < acc) {
                pick = o;
                break;
            }
        }
        obs.levels.push_back(pick);
    }
    return obs;
}

double step_reward(int n_violations) noexcept { return 50.0 - 100.0 * n_violations; }

double pomdp_reward(double confidence, double r_orig) noexcept { return 1.0 - confidence + confidence * r_orig; }

int count_violations(const std::vector<double>& voltages) noexcept {
    int n = 0;
    for (double v : voltages) {
        if (v >= kBandHigh || v <= kBandLow) ++n;
    }
    return n;
}

}  // namespace voltpomdp
