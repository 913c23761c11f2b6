#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace voltpomdp {

enum class BusType { slack, pv, pq };

std::string_view to_string(BusType type) noexcept;

struct Bus {
    int id = 0;
    BusType type = BusType::pq;
    double base_load_p = 0.0;  // MW
    double base_load_q = 0.0;  // MVAr
    double shunt = 0.0;        // shunt susceptance, p.u. on system base
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;           // p.u.
    double x = 0.0;           // p.u.
    double b_charging = 0.0;  // total line charging, p.u.
    double tap_ratio = 1.0;   // off-nominal ratio on the from side
};

struct Generator {
    int bus_id = 0;
    double setpoint_v = 1.0;  // p.u.
    double p_gen = 0.0;       // MW
    double q_min = -9999.0;   // MVAr
    double q_max = 9999.0;    // MVAr
};

// Bus/branch/generator model of a transmission network.
//
// Invariants (checked by validate()):
//   - exactly one slack bus
//   - bus ids are unique
//   - every generator sits on a slack or PV bus, at most one generator per bus
//   - every branch connects two distinct existing buses with r^2 + x^2 > 0 and tap_ratio > 0
struct GridCase {
    std::string name;
    std::string source;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;

    // Position of the bus with the given id in `buses`; throws InvalidArgument if absent.
    std::size_t bus_index(int bus_id) const;
    std::size_t slack_index() const;
};

// Throws ValidationError naming the first violated rule.
void validate(const GridCase& grid);

// True when the network stays connected after removing branch `skip` (pass
// branches.size() to test the intact network).
bool is_connected(const GridCase& grid, std::size_t skip);

// Branches whose removal keeps the network connected.
std::vector<std::size_t> non_islanding_branches(const GridCase& grid);

}  // namespace voltpomdp
