#pragma once

#include <vector>

#include "voltpomdp/discretization.hpp"
#include "voltpomdp/random.hpp"

namespace voltpomdp {

// Per-bus false-data-injection observation model.
//
// For a true level s the observed level is s with probability t_p, each
// adjacent level with probability (1 - t_p - r_p(s)) / 2, and the residual
// mass r_p(s) is spread uniformly over the remaining levels. At the edge
// levels the missing neighbour's share folds into the residual pool. r_p(s)
// is r_p_inside when the level midpoint lies strictly inside (0.95, 1.05)
// p.u. and r_p_outside otherwise.
struct ObservationModel {
    double t_p = 0.8;
    double r_p_inside = 0.1;
    double r_p_outside = 0.05;

    // Throws InvalidModel unless both t_p + r_p <= 1, all values are
    // probabilities, and r_p_inside >= r_p_outside.
    void validate() const;

    double residual(int level, const Discretization& disc) const;
};

inline constexpr double kBandLow = 0.95;
inline constexpr double kBandHigh = 1.05;

// Omega(o | s) for a single bus.
double observation_prob(int observed_level, int true_level, const ObservationModel& model,
                        const Discretization& disc);

// Omega(. | s) for a single bus as a length-N vector.
std::vector<double> observation_distribution(int true_level, const ObservationModel& model,
                                             const Discretization& disc);

// Row-stochastic N x N table, row = true level, column = observed level.
std::vector<std::vector<double>> observation_table(const ObservationModel& model, const Discretization& disc);

// Joint likelihood of an observed state: product of per-bus probabilities.
double observation_likelihood(const DiscreteState& observed, const DiscreteState& truth,
                              const ObservationModel& model, const Discretization& disc);

// Each bus's observed level is drawn independently from observation_distribution.
DiscreteState sample_observation(const DiscreteState& truth, const ObservationModel& model,
                                 const Discretization& disc, Rng& rng);

// R = 50 - 100 * n_v.
double step_reward(int n_violations) noexcept;

// R(s) = 1 - conf + conf * r_orig, conf being the observation-confidence mass.
double pomdp_reward(double confidence, double r_orig) noexcept;

// Number of voltages outside the open band (0.95, 1.05): V >= 1.05 or V <= 0.95.
int count_violations(const std::vector<double>& voltages) noexcept;

}  // namespace voltpomdp
