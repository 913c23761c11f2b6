#pragma once

#include <complex>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "voltpomdp/grid.hpp"

namespace voltpomdp {

// Multiplicative load factor per bus id; buses not listed keep factor 1.
using LoadScale = std::map<int, double>;

struct PowerFlowOptions {
    double tolerance = 1e-8;  // max |P,Q mismatch| in p.u.
    int max_iterations = 20;
    bool enforce_q_limits = true;
};

enum class PowerFlowStatus { converged, max_iterations, numerical_failure };

struct PowerFlowSolution {
    std::vector<int> bus_ids;           // same order as GridCase::buses
    std::vector<double> bus_voltages;   // p.u.
    std::vector<double> bus_angles;     // rad, slack = 0
    std::vector<BusType> bus_types;     // after any PV->PQ switching
    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0;          // p.u.
    PowerFlowStatus status = PowerFlowStatus::max_iterations;

    double voltage(int bus_id) const;
    double angle(int bus_id) const;
};

Eigen::MatrixXcd build_admittance(const GridCase& grid);

// Per-bus specified complex injections (generation minus scaled load) in p.u.
std::vector<std::complex<double>> scheduled_injections(const GridCase& grid, const LoadScale& load_scale);

// Complex power injections S_i = V_i * conj((Y V)_i) in p.u. for a solved profile.
std::vector<std::complex<double>> computed_injections(const Eigen::MatrixXcd& ybus,
                                                      std::span<const double> voltages,
                                                      std::span<const double> angles);

// Polar Newton-Raphson from a flat start. `setpoints` holds one voltage
// magnitude per generator (GridCase::generators order); an empty span keeps the
// case's own setpoints. Never throws on non-convergence: the returned solution
// carries converged = false and the failure status.
PowerFlowSolution solve_power_flow(const GridCase& grid, std::span<const double> setpoints,
                                   const LoadScale& load_scale = {}, const PowerFlowOptions& options = {});

PowerFlowSolution solve_power_flow(const GridCase& grid, const Eigen::MatrixXcd& ybus,
                                   std::span<const double> setpoints, const LoadScale& load_scale = {},
                                   const PowerFlowOptions& options = {});

// Throws Diverged when the solution did not converge.
const PowerFlowSolution& require_converged(const PowerFlowSolution& solution);

}  // namespace voltpomdp
