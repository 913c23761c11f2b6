#include "voltpomdp/case_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

namespace {

using nlohmann::json;

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

const json& field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw ParseError(path + " must be an object", 0);
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(path + "." + key + " is missing", 0);
    return *it;
}

double number(const json& obj, const char* key, const std::string& path) {
    const auto& v = field(obj, key, path);
    if (!v.is_number()) throw ParseError(path + "." + key + " must be a number", 0);
    return v.get<double>();
}

double number_or(const json& obj, const char* key, const std::string& path, double fallback) {
    if (!obj.contains(key)) return fallback;
    return number(obj, key, path);
}

int integer(const json& obj, const char* key, const std::string& path) {
    const auto& v = field(obj, key, path);
    if (!v.is_number_integer()) throw ParseError(path + "." + key + " must be an integer", 0);
    return v.get<int>();
}

BusType bus_type(const json& obj, const std::string& path) {
    const auto& v = field(obj, "type", path);
    if (!v.is_string()) throw ParseError(path + ".type must be a string", 0);
    const auto s = v.get<std::string>();
    if (s == "slack") return BusType::slack;
    if (s == "PV" || s == "pv") return BusType::pv;
    if (s == "PQ" || s == "pq") return BusType::pq;
    throw ParseError(path + ".type must be one of slack, PV, PQ (got \"" + s + "\")", 0);
}

const json& array(const json& doc, const char* key) {
    const auto& v = field(doc, key, "$");
    if (!v.is_array()) throw ParseError(std::string("$.") + key + " must be an array", 0);
    return v;
}

}  // namespace

GridCase parse_case(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed case file: ") + e.what(), line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0));
    }
    if (!doc.is_object()) throw ParseError("case file must contain a JSON object", 1);

    GridCase grid;
    grid.base_mva = number(doc, "base_mva", "$");
    if (doc.contains("name") && doc["name"].is_string()) grid.name = doc["name"].get<std::string>();
    if (doc.contains("source") && doc["source"].is_string()) grid.source = doc["source"].get<std::string>();

    const auto& buses = array(doc, "buses");
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const std::string path = "$.buses[" + std::to_string(i) + "]";
        const auto& b = buses[i];
        Bus bus;
        bus.id = integer(b, "id", path);
        bus.type = bus_type(b, path);
        bus.base_load_p = number_or(b, "base_load_p", path, 0.0);
        bus.base_load_q = number_or(b, "base_load_q", path, 0.0);
        bus.shunt = number_or(b, "shunt", path, 0.0);
        grid.buses.push_back(bus);
    }

    const auto& branches = array(doc, "branches");
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const std::string path = "$.branches[" + std::to_string(i) + "]";
        const auto& b = branches[i];
        Branch br;
        br.from_bus = integer(b, "from_bus", path);
        br.to_bus = integer(b, "to_bus", path);
        br.r = number(b, "r", path);
        br.x = number(b, "x", path);
        br.b_charging = number_or(b, "b_charging", path, 0.0);
        br.tap_ratio = number_or(b, "tap_ratio", path, 1.0);
        grid.branches.push_back(br);
    }

    const auto& gens = array(doc, "generators");
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const std::string path = "$.generators[" + std::to_string(i) + "]";
        const auto& g = gens[i];
        Generator gen;
        gen.bus_id = integer(g, "bus_id", path);
        gen.setpoint_v = number(g, "setpoint_v", path);
        gen.p_gen = number_or(g, "p_gen", path, 0.0);
        if (g.contains("q_limits")) {
            const auto& q = g["q_limits"];
            if (!q.is_array() || q.size() != 2 || !q[0].is_number() || !q[1].is_number()) {
                throw ParseError(path + ".q_limits must be [min, max]", 0);
            }
            gen.q_min = q[0].get<double>();
            gen.q_max = q[1].get<double>();
        }
        grid.generators.push_back(gen);
    }

    validate(grid);
    return grid;
}

GridCase load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open case file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str());
}

std::string serialize_case(const GridCase& grid) {
    json doc;
    doc["name"] = grid.name;
    doc["source"] = grid.source;
    doc["base_mva"] = grid.base_mva;
    doc["buses"] = json::array();
    for (const auto& b : grid.buses) {
        doc["buses"].push_back({{"id", b.id},
                                {"type", std::string(to_string(b.type))},
                                {"base_load_p", b.base_load_p},
                                {"base_load_q", b.base_load_q},
                                {"shunt", b.shunt}});
    }
    doc["branches"] = json::array();
    for (const auto& br : grid.branches) {
        doc["branches"].push_back({{"from_bus", br.from_bus},
                                   {"to_bus", br.to_bus},
                                   {"r", br.r},
                                   {"x", br.x},
                                   {"b_charging", br.b_charging},
                                   {"tap_ratio", br.tap_ratio}});
    }
    doc["generators"] = json::array();
    for (const auto& g : grid.generators) {
        doc["generators"].push_back({{"bus_id", g.bus_id},
                                     {"setpoint_v", g.setpoint_v},
                                     {"p_gen", g.p_gen},
                                     {"q_limits", {g.q_min, g.q_max}}});
    }
    return doc.dump(2);
}

}  // namespace voltpomdp
