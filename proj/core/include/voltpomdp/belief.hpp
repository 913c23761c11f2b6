#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "voltpomdp/discretization.hpp"
#include "voltpomdp/observation.hpp"

namespace voltpomdp {

// b'(s') ∝ likelihood(s') * sum_s P(s, s') b(s), with `transition` row-stochastic
// (row = current state, column = next state). Throws ImpossibleObservation when
// the normalizer is zero and ShapeError on mismatched sizes.
Eigen::VectorXd update_belief(const Eigen::VectorXd& belief, const Eigen::MatrixXd& transition,
                              const Eigen::VectorXd& likelihood);

// Dirichlet pseudo-counts phi[s][a][s'] over one discrete state space.
// Rows are allocated on first touch and start at the prior count.
class DirichletCounts {
public:
    DirichletCounts(std::size_t n_states, std::size_t n_actions, double prior_count = 1.0);

    std::size_t n_states() const noexcept { return n_states_; }
    std::size_t n_actions() const noexcept { return n_actions_; }
    double prior_count() const noexcept { return prior_; }

    void increment(std::size_t s, std::size_t a, std::size_t s_next, double amount = 1.0);
    double count(std::size_t s, std::size_t a, std::size_t s_next) const;

    // Dirichlet mean P(s' | s, a).
    double mean(std::size_t s, std::size_t a, std::size_t s_next) const;
    Eigen::VectorXd mean_row(std::size_t s, std::size_t a) const;
    Eigen::MatrixXd mean_transition(std::size_t a) const;

    std::size_t allocated_rows() const noexcept { return rows_.size(); }

private:
    std::size_t key(std::size_t s, std::size_t a) const;

    std::size_t n_states_;
    std::size_t n_actions_;
    double prior_;
    std::unordered_map<std::size_t, std::vector<double>> rows_;
};

// Functional form of the hyper-state update: returns a copy with phi[s][a][s'] + 1.
DirichletCounts update_hyper_state(DirichletCounts phi, std::size_t s, std::size_t a, std::size_t s_next);

// Factored belief: one length-N vector and one Dirichlet table per monitored bus.
struct BeliefState {
    std::vector<Eigen::VectorXd> probs;
    std::vector<DirichletCounts> counts;
};

// Tracks the factored belief over an episode. Transition counts are updated
// from the MAP level of the belief before and after each step.
class BeliefTracker {
public:
    BeliefTracker(Discretization disc, ObservationModel model, double prior_count = 1.0);

    // Starts an episode from a uniform prior conditioned on the first observation.
    // Transition counts persist across episodes.
    void reset(const DiscreteState& observation);
    void update(std::size_t action_index, const DiscreteState& observation);

    const BeliefState& belief() const noexcept { return state_; }
    DiscreteState map_state() const;

private:
    Discretization disc_;
    ObservationModel model_;
    std::vector<std::vector<double>> omega_;  // omega_[s][o]
    BeliefState state_;
};

}  // namespace voltpomdp
