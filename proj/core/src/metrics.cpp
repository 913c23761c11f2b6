#include "voltpomdp/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "voltpomdp/errors.hpp"

namespace voltpomdp {

std::size_t MetricsTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) return i;
    }
    throw InvalidArgument("missing column '" + name + "'");
}

bool MetricsTable::has_column(const std::string& name) const {
    for (const auto& c : columns) {
        if (c == name) return true;
    }
    return false;
}

std::vector<double> MetricsTable::column(const std::string& name) const {
    const auto idx = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[idx]);
    return out;
}

void MetricsTable::add_row(std::vector<double> row) {
    if (row.size() != columns.size()) throw ShapeError("row width does not match the column count");
    rows.push_back(std::move(row));
}

std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    if (v == 0.0) return "0";  // folds -0
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void MetricsTable::write_csv(std::ostream& out) const {
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_number(r[i]);
        out << '\n';
    }
}

void MetricsTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    write_csv(out);
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

MetricsTable MetricsTable::read_csv(std::istream& in) {
    MetricsTable t;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty CSV", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.columns = split(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.columns.size()) throw ParseError("row has " + std::to_string(cells.size()) + " cells, header has " + std::to_string(t.columns.size()), lineno);
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            if (c == "NA" || c.empty()) {
                row.push_back(kMissing);
                continue;
            }
            double v = 0.0;
            auto res = std::from_chars(c.data(), c.data() + c.size(), v);
            if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
                throw ParseError("not a number: '" + c + "'", lineno);
            }
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

MetricsTable MetricsTable::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read " + path.string());
    return read_csv(in);
}

std::vector<double> rolling_mean(const std::vector<double>& values, std::size_t window) {
    std::vector<double> out(values.size(), kMissing);
    if (window == 0) return out;
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        sum += values[i];
        if (i >= window) sum -= values[i - window];
        if (i + 1 >= window) out[i] = sum / static_cast<double>(window);
    }
    return out;
}

double fitted_slope(const std::vector<double>& y) {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (std::isnan(y[i])) continue;
        const double x = static_cast<double>(i);
        n += 1;
        sx += x;
        sy += y[i];
        sxx += x * x;
        sxy += x * y[i];
    }
    const double den = n * sxx - sx * sx;
    if (n < 2 || den == 0.0) return 0.0;
    return (n * sxy - sx * sy) / den;
}

long first_reaching(const std::vector<double>& values, double threshold) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isnan(values[i]) && values[i] >= threshold) return static_cast<long>(i);
    }
    return -1;
}

}  // namespace voltpomdp
