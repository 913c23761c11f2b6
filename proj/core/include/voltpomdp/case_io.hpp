#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "voltpomdp/grid.hpp"

namespace voltpomdp {

// Parses a JSON case file (top-level keys base_mva, buses, branches, generators)
// and validates it. Syntax errors raise ParseError with the 1-based line number;
// schema errors raise ParseError naming the JSON path; invariant violations raise
// ValidationError naming the rule.
GridCase parse_case(std::string_view text);

GridCase load_case(const std::filesystem::path& path);

std::string serialize_case(const GridCase& grid);

}  // namespace voltpomdp
