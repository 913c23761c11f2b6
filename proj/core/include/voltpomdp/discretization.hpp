#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace voltpomdp {

// Voltage and setpoint grids of the control problem.
//
// State space: N levels per monitored bus over [v_min, v_max], size N^n_b.
// Action space: p setpoint levels per generator over [action_min, action_max],
// size p^M. Setpoint level l decodes to the bin midpoint
// action_min + (l + 0.5) * (action_max - action_min) / p.
struct Discretization {
    int n_levels = 20;
    double v_min = 0.90;
    double v_max = 1.10;
    std::vector<int> monitored_buses;
    int action_levels = 5;
    double action_min = 0.95;
    double action_max = 1.05;
    int n_generators = 3;

    double level_width() const noexcept { return (v_max - v_min) / n_levels; }
    double level_midpoint(int level) const noexcept { return v_min + (level + 0.5) * level_width(); }
    double setpoint(int level) const noexcept {
        return action_min + (level + 0.5) * (action_max - action_min) / action_levels;
    }
    std::size_t n_monitored() const noexcept { return monitored_buses.size(); }
    std::size_t n_states() const;
    std::size_t n_actions() const;

    // Throws InvalidArgument when N < 2, p < 2, widths are not positive, or the
    // state/action index space overflows.
    void validate() const;
};

struct DiscreteState {
    std::vector<int> levels;  // one per monitored bus, each in [0, N-1]
    bool operator==(const DiscreteState&) const = default;
};

struct DiscreteAction {
    std::vector<int> setpoint_levels;  // one per generator, each in [0, p-1]
    bool operator==(const DiscreteAction&) const = default;
};

// level = clamp(floor((v - v_min) / width), 0, N-1).
int discretize_voltage(double v, const Discretization& disc);
DiscreteState discretize(std::span<const double> voltages, const Discretization& disc);

// Mixed-radix codecs, first component most significant.
std::size_t encode(const DiscreteState& s, const Discretization& disc);
std::size_t encode(const DiscreteAction& a, const Discretization& disc);
DiscreteState decode_state(std::size_t index, const Discretization& disc);
DiscreteAction decode_action(std::size_t index, const Discretization& disc);

std::vector<double> setpoints(const DiscreteAction& a, const Discretization& disc);

// Mean setpoint level of an action, in [0, p-1].
double mean_setpoint_level(const DiscreteAction& a);

}  // namespace voltpomdp
