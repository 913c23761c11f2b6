#include "voltpomdp/belief.hpp"

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

Eigen::VectorXd update_belief(const Eigen::VectorXd& belief, const Eigen::MatrixXd& transition,
                              const Eigen::VectorXd& likelihood) {
    if (transition.rows() != belief.size() || transition.cols() != likelihood.size()) {
        throw ShapeError("belief, transition and likelihood sizes disagree");
    }
    Eigen::VectorXd next = likelihood.cwiseProduct(transition.transpose() * belief);
    const double z = next.sum();
    if (!(z > 0.0)) throw ImpossibleObservation("observation has zero likelihood under the current belief");
    return next / z;
}

DirichletCounts::DirichletCounts(std::size_t n_states, std::size_t n_actions, double prior_count)
    : n_states_(n_states), n_actions_(n_actions), prior_(prior_count) {
    if (n_states == 0 || n_actions == 0) throw InvalidArgument("Dirichlet table needs states and actions");
    if (!(prior_count > 0.0)) throw InvalidArgument("Dirichlet prior count must be positive");
}

std::size_t DirichletCounts::key(std::size_t s, std::size_t a) const {
    if (s >= n_states_ || a >= n_actions_) throw InvalidArgument("Dirichlet index out of range");
    return s * n_actions_ + a;
}

void DirichletCounts::increment(std::size_t s, std::size_t a, std::size_t s_next, double amount) {
    if (s_next >= n_states_) throw InvalidArgument("Dirichlet index out of range");
    auto [it, inserted] = rows_.try_emplace(key(s, a));
    if (inserted) it->second.assign(n_states_, prior_);
    it->second[s_next] += amount;
}

double DirichletCounts::count(std::size_t s, std::size_t a, std::size_t s_next) const {
    if (s_next >= n_states_) throw InvalidArgument("Dirichlet index out of range");
    auto it = rows_.find(key(s, a));
    return it == rows_.end() ? prior_ : it->second[s_next];
}

double DirichletCounts::mean(std::size_t s, std::size_t a, std::size_t s_next) const {
    return mean_row(s, a)(static_cast<Eigen::Index>(s_next));
}

Eigen::VectorXd DirichletCounts::mean_row(std::size_t s, std::size_t a) const {
    const auto n = static_cast<Eigen::Index>(n_states_);
    auto it = rows_.find(key(s, a));
    if (it == rows_.end()) return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n_states_));
    Eigen::VectorXd row = Eigen::Map<const Eigen::VectorXd>(it->second.data(), n);
    return row / row.sum();
}

Eigen::MatrixXd DirichletCounts::mean_transition(std::size_t a) const {
    const auto n = static_cast<Eigen::Index>(n_states_);
    Eigen::MatrixXd p(n, n);
    for (std::size_t s = 0; s < n_states_; ++s) p.row(static_cast<Eigen::Index>(s)) = mean_row(s, a).transpose();
    return p;
}

DirichletCounts update_hyper_state(DirichletCounts phi, std::size_t s, std::size_t a, std::size_t s_next) {
    phi.increment(s, a, s_next);
    return phi;
}

BeliefTracker::BeliefTracker(Discretization disc, ObservationModel model, double prior_count)
    : disc_(std::move(disc)), model_(model), omega_(observation_table(model_, disc_)) {
    disc_.validate();
    const auto n = static_cast<std::size_t>(disc_.n_levels);
    for (std::size_t i = 0; i < disc_.n_monitored(); ++i) {
        state_.probs.emplace_back(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
        state_.counts.emplace_back(n, disc_.n_actions(), prior_count);
    }
}

void BeliefTracker::reset(const DiscreteState& observation) {
    if (observation.levels.size() != disc_.n_monitored()) throw ShapeError("observation has wrong number of buses");
    const auto n = static_cast<Eigen::Index>(disc_.n_levels);
    for (std::size_t i = 0; i < disc_.n_monitored(); ++i) {
        Eigen::VectorXd b(n);
        for (Eigen::Index s = 0; s < n; ++s) {
            b(s) = omega_[static_cast<std::size_t>(s)][static_cast<std::size_t>(observation.levels[i])];
        }
        const double z = b.sum();
        if (!(z > 0.0)) throw ImpossibleObservation("observation has zero likelihood under every state");
        state_.probs[i] = b / z;
    }
}

void BeliefTracker::update(std::size_t action_index, const DiscreteState& observation) {
    if (observation.levels.size() != disc_.n_monitored()) throw ShapeError("observation has wrong number of buses");
    const auto n = static_cast<Eigen::Index>(disc_.n_levels);
    for (std::size_t i = 0; i < disc_.n_monitored(); ++i) {
        auto& b = state_.probs[i];
        Eigen::Index before = 0;
        b.maxCoeff(&before);
        Eigen::VectorXd like(n);
        for (Eigen::Index s = 0; s < n; ++s) {
            like(s) = omega_[static_cast<std::size_t>(s)][static_cast<std::size_t>(observation.levels[i])];
        }
        b = update_belief(b, state_.counts[i].mean_transition(action_index), like);
        Eigen::Index after = 0;
        b.maxCoeff(&after);
        state_.counts[i].increment(static_cast<std::size_t>(before), action_index, static_cast<std::size_t>(after));
    }
}

DiscreteState BeliefTracker::map_state() const {
    DiscreteState s;
    for (const auto& b : state_.probs) {
        Eigen::Index idx = 0;
        b.maxCoeff(&idx);
        s.levels.push_back(static_cast<int>(idx));
    }
    return s;
}

}  // namespace voltpomdp
