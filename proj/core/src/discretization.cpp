#include "voltpomdp/discretization.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

// Absorbs representation error at exact bin edges, e.g. (0.96 - 0.90) / 0.01.
constexpr double kEdgeGuard = 1e-9;

std::size_t checked_power(std::size_t base, std::size_t exp) {
    std::size_t out = 1;
    for (std::size_t i = 0; i < exp; ++i) {
        if (out > std::numeric_limits<std::size_t>::max() / base) {
            throw InvalidArgument("discrete space too large to index");
        }
        out *= base;
    }
    return out;
}

}  // namespace

std::size_t Discretization::n_states() const {
    return checked_power(static_cast<std::size_t>(n_levels), monitored_buses.size());
}

std::size_t Discretization::n_actions() const {
    return checked_power(static_cast<std::size_t>(action_levels), static_cast<std::size_t>(n_generators));
}

void Discretization::validate() const {
    if (n_levels < 2) throw InvalidArgument("n_levels must be >= 2");
    if (action_levels < 2) throw InvalidArgument("action_levels must be >= 2");
    if (!(v_max > v_min)) throw InvalidArgument("voltage range must have positive width");
    if (!(action_max > action_min)) throw InvalidArgument("setpoint range must have positive width");
    if (n_generators < 1) throw InvalidArgument("at least one generator is required");
    if (monitored_buses.empty()) throw InvalidArgument("at least one monitored bus is required");
    (void)n_states();
    (void)n_actions();
}

int discretize_voltage(double v, const Discretization& disc) {
    const double pos = std::floor((v - disc.v_min) / disc.level_width() + kEdgeGuard);
    if (!(pos > 0.0)) return 0;  // also maps NaN to the lowest level
    if (pos >= disc.n_levels - 1) return disc.n_levels - 1;
    return static_cast<int>(pos);
}

DiscreteState discretize(std::span<const double> voltages, const Discretization& disc) {
    DiscreteState s;
    s.levels.reserve(voltages.size());
    for (double v : voltages) s.levels.push_back(discretize_voltage(v, disc));
    return s;
}

std::size_t encode(const DiscreteState& s, const Discretization& disc) {
    if (s.levels.size() != disc.n_monitored()) throw ShapeError("state has wrong number of buses");
    std::size_t idx = 0;
    for (int level : s.levels) {
        if (level < 0 || level >= disc.n_levels) throw InvalidArgument("state level out of range");
        idx = idx * static_cast<std::size_t>(disc.n_levels) + static_cast<std::size_t>(level);
    }
    return idx;
}

std::size_t encode(const DiscreteAction& a, const Discretization& disc) {
    if (a.setpoint_levels.size() != static_cast<std::size_t>(disc.n_generators)) {
        throw ShapeError("action has wrong number of generators");
    }
    std::size_t idx = 0;
    for (int level : a.setpoint_levels) {
        if (level < 0 || level >= disc.action_levels) throw InvalidArgument("setpoint level out of range");
        idx = idx * static_cast<std::size_t>(disc.action_levels) + static_cast<std::size_t>(level);
    }
    return idx;
}

DiscreteState decode_state(std::size_t index, const Discretization& disc) {
    if (index >= disc.n_states()) throw InvalidArgument("state index out of range");
    DiscreteState s;
    s.levels.assign(disc.n_monitored(), 0);
    const auto base = static_cast<std::size_t>(disc.n_levels);
    for (std::size_t i = s.levels.size(); i-- > 0;) {
        s.levels[i] = static_cast<int>(index % base);
        index /= base;
    }
    return s;
}

DiscreteAction decode_action(std::size_t index, const Discretization& disc) {
    if (index >= disc.n_actions()) throw InvalidArgument("action index out of range");
    DiscreteAction a;
    a.setpoint_levels.assign(static_cast<std::size_t>(disc.n_generators), 0);
    const auto base = static_cast<std::size_t>(disc.action_levels);
    for (std::size_t i = a.setpoint_levels.size(); i-- > 0;) {
        a.setpoint_levels[i] = static_cast<int>(index % base);
        index /= base;
    }
    return a;
}

std::vector<double> setpoints(const DiscreteAction& a, const Discretization& disc) {
    std::vector<double> v;
    v.reserve(a.setpoint_levels.size());
    for (int level : a.setpoint_levels) v.push_back(disc.setpoint(level));
    return v;
}

double mean_setpoint_level(const DiscreteAction& a) {
    if (a.setpoint_levels.empty()) return 0.0;
    return std::accumulate(a.setpoint_levels.begin(), a.setpoint_levels.end(), 0.0) /
           static_cast<double>(a.setpoint_levels.size());
}

}  // namespace voltpomdp
