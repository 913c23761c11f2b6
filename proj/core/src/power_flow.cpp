#include "voltpomdp/power_flow.hpp"

#include <cmath>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

constexpr double kMinSetpoint = 0.5;
constexpr double kMaxSetpoint = 1.5;

struct Mismatch {
    Eigen::VectorXd values;
    double max_abs = 0.0;
};

}  // namespace

double PowerFlowSolution::voltage(int bus_id) const {
    for (std::size_t i = 0; i < bus_ids.size(); ++i) {
        if (bus_ids[i] == bus_id) return bus_voltages[i];
    }
    throw InvalidArgument("unknown bus id " + std::to_string(bus_id));
}

double PowerFlowSolution::angle(int bus_id) const {
    for (std::size_t i = 0; i < bus_ids.size(); ++i) {
        if (bus_ids[i] == bus_id) return bus_angles[i];
    }
    throw InvalidArgument("unknown bus id " + std::to_string(bus_id));
}

Eigen::MatrixXcd build_admittance(const GridCase& grid) {
    const auto n = static_cast<Eigen::Index>(grid.buses.size());
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& br : grid.branches) {
        const auto f = static_cast<Eigen::Index>(grid.bus_index(br.from_bus));
        const auto t = static_cast<Eigen::Index>(grid.bus_index(br.to_bus));
        const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
        const std::complex<double> half_b(0.0, br.b_charging / 2.0);
        const double tap = br.tap_ratio;
        y(f, f) += (ys + half_b) / (tap * tap);
        y(t, t) += ys + half_b;
        y(f, t) -= ys / tap;
        y(t, f) -= ys / tap;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i, i) += std::complex<double>(0.0, grid.buses[static_cast<std::size_t>(i)].shunt);
    }
    return y;
}

std::vector<std::complex<double>> scheduled_injections(const GridCase& grid, const LoadScale& load_scale) {
    std::vector<std::complex<double>> s(grid.buses.size());
    for (std::size_t i = 0; i < grid.buses.size(); ++i) {
        const auto& bus = grid.buses[i];
        double scale = 1.0;
        if (auto it = load_scale.find(bus.id); it != load_scale.end()) scale = it->second;
        s[i] = -std::complex<double>(bus.base_load_p, bus.base_load_q) * scale / grid.base_mva;
    }
    for (const auto& gen : grid.generators) {
        s[grid.bus_index(gen.bus_id)] += gen.p_gen / grid.base_mva;
    }
    return s;
}

std::vector<std::complex<double>> computed_injections(const Eigen::MatrixXcd& ybus,
                                                      std::span<const double> voltages,
                                                      std::span<const double> angles) {
    const auto n = static_cast<Eigen::Index>(voltages.size());
    Eigen::VectorXcd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = std::polar(voltages[static_cast<std::size_t>(i)], angles[static_cast<std::size_t>(i)]);
    }
    const Eigen::VectorXcd current = ybus * v;
    std::vector<std::complex<double>> s(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = v(i) * std::conj(current(i));
    return s;
}

PowerFlowSolution solve_power_flow(const GridCase& grid, std::span<const double> setpoints,
                                   const LoadScale& load_scale, const PowerFlowOptions& options) {
    return solve_power_flow(grid, build_admittance(grid), setpoints, load_scale, options);
}

PowerFlowSolution solve_power_flow(const GridCase& grid, const Eigen::MatrixXcd& ybus,
                                   std::span<const double> setpoints, const LoadScale& load_scale,
                                   const PowerFlowOptions& options) {
    const std::size_t n = grid.buses.size();
    if (!setpoints.empty() && setpoints.size() != grid.generators.size()) {
        throw InvalidArgument("expected " + std::to_string(grid.generators.size()) + " generator setpoints, got " +
                              std::to_string(setpoints.size()));
    }
    for (double v : setpoints) {
        if (!(v >= kMinSetpoint && v <= kMaxSetpoint)) {
            throw InvalidArgument("generator setpoint " + std::to_string(v) + " outside [0.5, 1.5] p.u.");
        }
    }
    for (const auto& [bus, factor] : load_scale) {
        if (!(factor > 0.0)) throw InvalidArgument("load scale for bus " + std::to_string(bus) + " must be positive");
    }

    PowerFlowSolution sol;
    sol.bus_ids.reserve(n);
    for (const auto& b : grid.buses) sol.bus_ids.push_back(b.id);
    sol.bus_types.reserve(n);
    for (const auto& b : grid.buses) sol.bus_types.push_back(b.type);
    sol.bus_voltages.assign(n, 1.0);
    sol.bus_angles.assign(n, 0.0);

    const auto scheduled = scheduled_injections(grid, load_scale);
    std::vector<double> p_spec(n), q_spec(n);
    for (std::size_t i = 0; i < n; ++i) {
        p_spec[i] = scheduled[i].real();
        q_spec[i] = scheduled[i].imag();
    }
    // Generator index per bus, -1 when none.
    std::vector<int> gen_at(n, -1);
    for (std::size_t g = 0; g < grid.generators.size(); ++g) {
        const auto i = grid.bus_index(grid.generators[g].bus_id);
        gen_at[i] = static_cast<int>(g);
        sol.bus_voltages[i] = setpoints.empty() ? grid.generators[g].setpoint_v : setpoints[g];
    }

    const Eigen::MatrixXd g_mat = ybus.real();
    const Eigen::MatrixXd b_mat = ybus.imag();
    auto& vm = sol.bus_voltages;
    auto& va = sol.bus_angles;

    auto injections = [&](Eigen::VectorXd& p, Eigen::VectorXd& q) {
        p.setZero(static_cast<Eigen::Index>(n));
        q.setZero(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
                const auto ii = static_cast<Eigen::Index>(i), kk = static_cast<Eigen::Index>(k);
                if (g_mat(ii, kk) == 0.0 && b_mat(ii, kk) == 0.0) continue;
                const double d = va[i] - va[k];
                const double c = std::cos(d), s = std::sin(d);
                p(ii) += vm[i] * vm[k] * (g_mat(ii, kk) * c + b_mat(ii, kk) * s);
                q(ii) += vm[i] * vm[k] * (g_mat(ii, kk) * s - b_mat(ii, kk) * c);
            }
        }
    };

    const int max_passes = static_cast<int>(grid.generators.size()) + 1;
    Eigen::VectorXd p_calc, q_calc;
    for (int pass = 0; pass < max_passes; ++pass) {
        // Unknown ordering: angles of every non-slack bus, then magnitudes of PQ buses.
        std::vector<std::size_t> ang_idx, mag_idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (sol.bus_types[i] != BusType::slack) ang_idx.push_back(i);
            if (sol.bus_types[i] == BusType::pq) mag_idx.push_back(i);
        }
        const auto na = static_cast<Eigen::Index>(ang_idx.size());
        const auto nm = static_cast<Eigen::Index>(mag_idx.size());
        std::vector<Eigen::Index> ang_pos(n, -1), mag_pos(n, -1);
        for (Eigen::Index r = 0; r < na; ++r) ang_pos[ang_idx[static_cast<std::size_t>(r)]] = r;
        for (Eigen::Index r = 0; r < nm; ++r) mag_pos[mag_idx[static_cast<std::size_t>(r)]] = r;

        auto mismatch = [&]() {
            injections(p_calc, q_calc);
            Mismatch m;
            m.values.resize(na + nm);
            for (Eigen::Index r = 0; r < na; ++r) {
                const auto i = ang_idx[static_cast<std::size_t>(r)];
                m.values(r) = p_spec[i] - p_calc(static_cast<Eigen::Index>(i));
            }
            for (Eigen::Index r = 0; r < nm; ++r) {
                const auto i = mag_idx[static_cast<std::size_t>(r)];
                m.values(na + r) = q_spec[i] - q_calc(static_cast<Eigen::Index>(i));
            }
            m.max_abs = m.values.size() > 0 ? m.values.cwiseAbs().maxCoeff() : 0.0;
            return m;
        };

        bool converged = false;
        for (int it = 0;; ++it) {
            const auto m = mismatch();
            sol.max_mismatch = m.max_abs;
            if (!std::isfinite(m.max_abs)) {
                sol.status = PowerFlowStatus::numerical_failure;
                return sol;
            }
            if (m.max_abs <= options.tolerance) {
                converged = true;
                break;
            }
            if (it >= options.max_iterations) {
                sol.status = PowerFlowStatus::max_iterations;
                return sol;
            }

            Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(na + nm, na + nm);
            for (std::size_t i = 0; i < n; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                const auto rp = ang_pos[i];
                const auto rq = mag_pos[i];
                if (rp < 0 && rq < 0) continue;
                for (std::size_t k = 0; k < n; ++k) {
                    const auto kk = static_cast<Eigen::Index>(k);
                    const auto ca = ang_pos[k];
                    const auto cm = mag_pos[k];
                    if (ca < 0 && cm < 0) continue;
                    const double gik = g_mat(ii, kk), bik = b_mat(ii, kk);
                    if (i != k && gik == 0.0 && bik == 0.0) continue;
                    if (i == k) {
                        const double vi = vm[i];
                        if (rp >= 0 && ca >= 0) jac(rp, ca) = -q_calc(ii) - bik * vi * vi;
                        if (rp >= 0 && cm >= 0) jac(rp, na + cm) = p_calc(ii) / vi + gik * vi;
                        if (rq >= 0 && ca >= 0) jac(na + rq, ca) = p_calc(ii) - gik * vi * vi;
                        if (rq >= 0 && cm >= 0) jac(na + rq, na + cm) = q_calc(ii) / vi - bik * vi;
                        continue;
                    }
                    const double d = va[i] - va[k];
                    const double c = std::cos(d), s = std::sin(d);
                    const double gs_bc = gik * s - bik * c;
                    const double gc_bs = gik * c + bik * s;
                    if (rp >= 0 && ca >= 0) jac(rp, ca) = vm[i] * vm[k] * gs_bc;
                    if (rp >= 0 && cm >= 0) jac(rp, na + cm) = vm[i] * gc_bs;
                    if (rq >= 0 && ca >= 0) jac(na + rq, ca) = -vm[i] * vm[k] * gc_bs;
                    if (rq >= 0 && cm >= 0) jac(na + rq, na + cm) = vm[i] * gs_bc;
                }
            }
            const Eigen::VectorXd dx = jac.partialPivLu().solve(m.values);
            ++sol.iterations;
            if (!dx.allFinite()) {
                sol.status = PowerFlowStatus::numerical_failure;
                return sol;
            }
            for (Eigen::Index r = 0; r < na; ++r) va[ang_idx[static_cast<std::size_t>(r)]] += dx(r);
            for (Eigen::Index r = 0; r < nm; ++r) vm[mag_idx[static_cast<std::size_t>(r)]] += dx(na + r);
            for (auto i : mag_idx) {
                if (!(vm[i] > 1e-3 && vm[i] < 3.0)) {
                    sol.status = PowerFlowStatus::numerical_failure;
                    return sol;
                }
            }
        }
        if (!converged) break;

        bool switched = false;
        if (options.enforce_q_limits) {
            injections(p_calc, q_calc);
            for (std::size_t i = 0; i < n; ++i) {
                if (sol.bus_types[i] != BusType::pv || gen_at[i] < 0) continue;
                const auto& gen = grid.generators[static_cast<std::size_t>(gen_at[i])];
                const double q_load = -q_spec[i];
                const double q_gen_mvar = (q_calc(static_cast<Eigen::Index>(i)) + q_load) * grid.base_mva;
                double clamp = q_gen_mvar;
                if (q_gen_mvar > gen.q_max) clamp = gen.q_max;
                if (q_gen_mvar < gen.q_min) clamp = gen.q_min;
                if (clamp != q_gen_mvar) {
                    sol.bus_types[i] = BusType::pq;
                    q_spec[i] = clamp / grid.base_mva - q_load;
                    switched = true;
                }
            }
        }
        if (!switched) {
            sol.converged = true;
            sol.status = PowerFlowStatus::converged;
            return sol;
        }
    }
    sol.status = PowerFlowStatus::max_iterations;
    return sol;
}

const PowerFlowSolution& require_converged(const PowerFlowSolution& solution) {
    if (!solution.converged) {
        throw Diverged(solution.status == PowerFlowStatus::numerical_failure
                           ? "power flow diverged: numerical failure in Newton-Raphson update"
                           : "power flow diverged: iteration limit reached (mismatch " +
                                 std::to_string(solution.max_mismatch) + " p.u.)");
    }
    return solution;
}

}  // namespace voltpomdp
