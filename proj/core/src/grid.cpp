#include "voltpomdp/grid.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

std::string_view to_string(BusType type) noexcept {
    switch (type) {
        case BusType::slack: return "slack";
        case BusType::pv: return "PV";
        case BusType::pq: return "PQ";
    }
    return "PQ";
}

std::size_t GridCase::bus_index(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == bus_id) return i;
    }
    throw InvalidArgument("unknown bus id " + std::to_string(bus_id));
}

std::size_t GridCase::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].type == BusType::slack) return i;
    }
    throw ValidationError("exactly one slack bus");
}

void validate(const GridCase& grid) {
    if (!(grid.base_mva > 0.0)) throw ValidationError("base_mva must be positive");
    if (grid.buses.empty()) throw ValidationError("case has no buses");

    std::set<int> ids;
    for (const auto& bus : grid.buses) {
        if (!ids.insert(bus.id).second) {
            throw ValidationError("bus ids must be unique (duplicate " + std::to_string(bus.id) + ")");
        }
    }
    const auto n_slack = std::count_if(grid.buses.begin(), grid.buses.end(),
                                       [](const Bus& b) { return b.type == BusType::slack; });
    if (n_slack != 1) throw ValidationError("exactly one slack bus");

    std::set<int> gen_buses;
    for (const auto& gen : grid.generators) {
        if (!ids.contains(gen.bus_id)) {
            throw ValidationError("generator bus must exist (bus " + std::to_string(gen.bus_id) + ")");
        }
        const auto& bus = grid.buses[grid.bus_index(gen.bus_id)];
        if (bus.type == BusType::pq) {
            throw ValidationError("generator bus must be of type slack or PV (bus " +
                                  std::to_string(gen.bus_id) + ")");
        }
        if (!gen_buses.insert(gen.bus_id).second) {
            throw ValidationError("at most one generator per bus (bus " + std::to_string(gen.bus_id) + ")");
        }
        if (gen.q_min > gen.q_max) {
            throw ValidationError("generator q_limits must satisfy min <= max (bus " +
                                  std::to_string(gen.bus_id) + ")");
        }
    }
    for (const auto& bus : grid.buses) {
        if (bus.type == BusType::pv && !gen_buses.contains(bus.id)) {
            throw ValidationError("PV bus requires a generator (bus " + std::to_string(bus.id) + ")");
        }
    }

    for (std::size_t k = 0; k < grid.branches.size(); ++k) {
        const auto& br = grid.branches[k];
        const std::string tag = " (branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) + ")";
        if (!ids.contains(br.from_bus) || !ids.contains(br.to_bus)) {
            throw ValidationError("branch endpoints must exist" + tag);
        }
        if (br.from_bus == br.to_bus) throw ValidationError("branch endpoints must differ" + tag);
        if (!(br.r * br.r + br.x * br.x > 0.0)) throw ValidationError("branch impedance nonzero" + tag);
        if (!(br.tap_ratio > 0.0)) throw ValidationError("branch tap_ratio must be positive" + tag);
    }
    if (!is_connected(grid, grid.branches.size())) throw ValidationError("network must be connected");
}

bool is_connected(const GridCase& grid, std::size_t skip) {
    const std::size_t n = grid.buses.size();
    if (n == 0) return true;
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
    };
    std::size_t components = n;
    for (std::size_t k = 0; k < grid.branches.size(); ++k) {
        if (k == skip) continue;
        const auto a = find(grid.bus_index(grid.branches[k].from_bus));
        const auto b = find(grid.bus_index(grid.branches[k].to_bus));
        if (a != b) {
            parent[a] = b;
            --components;
        }
    }
    return components == 1;
}

std::vector<std::size_t> non_islanding_branches(const GridCase& grid) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < grid.branches.size(); ++k) {
        if (is_connected(grid, k)) out.push_back(k);
    }
    return out;
}

}  // namespace voltpomdp
