#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace voltpomdp {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Column-named numeric table backing every CSV artifact. NaN cells are
// written as "NA" and read back as NaN.
struct MetricsTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t column_index(const std::string& name) const;  // throws InvalidArgument
    bool has_column(const std::string& name) const;
    std::vector<double> column(const std::string& name) const;
    void add_row(std::vector<double> row);

    void write_csv(std::ostream& out) const;
    void write_csv(const std::filesystem::path& path) const;
    static MetricsTable read_csv(std::istream& in);
    static MetricsTable read_csv(const std::filesystem::path& path);
};

// Shortest decimal text that round-trips; "NA" for NaN.
std::string format_number(double v);

// Mean of the trailing `window` values; NaN until the window is full.
std::vector<double> rolling_mean(const std::vector<double>& values, std::size_t window);

// Least-squares slope of y against its index, ignoring NaN entries.
double fitted_slope(const std::vector<double>& y);

// First index whose value is >= threshold, or -1 when never reached.
long first_reaching(const std::vector<double>& values, double threshold);

}  // namespace voltpomdp
