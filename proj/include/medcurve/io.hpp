#pragma once

// Plain-text formats: curve CSV (id, one column per time point), two-column
// series CSV (t, value), strata CSV (unit_id, stratum 1..H) and the JSON
// design spec.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medcurve/curves.hpp"
#include "medcurve/designs.hpp"
#include "medcurve/error.hpp"

namespace medcurve::io {

using json = nlohmann::json;

// 12 significant digits, locale independent.
inline std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

namespace detail {

inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        else if (c == ',' && !quoted) {
            out.push_back(std::move(cell));
            cell.clear();
        } else cell.push_back(c);
    }
    out.push_back(std::move(cell));
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    }
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

struct Lines {
    std::vector<std::pair<std::size_t, std::string>> rows;  // (1-based line number, text)
};

inline Lines read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    Lines out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        out.rows.emplace_back(no, std::move(line));
    }
    return out;
}

[[noreturn]] inline void fail_at(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw input_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

} // namespace detail

// Curve CSV: header "id,t_1,...,t_D" with numeric time points, then one row
// per unit.  Non-numeric headers fall back to points d/D.  The grid has
// uniform quadrature weights over a unit horizon.
inline CurvePopulation read_curves(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    if (lines.rows.empty()) throw input_error(path.string() + ": empty file");
    const auto header = detail::split_csv(lines.rows[0].second);
    if (header.size() < 2) detail::fail_at(path, lines.rows[0].first, "header needs an id column and at least one time point");
    const std::size_t D = header.size() - 1;
    std::vector<double> points(D);
    bool numeric = true;
    for (std::size_t d = 0; d < D; ++d) numeric = numeric && detail::parse_double(header[d + 1], points[d]);
    if (!numeric)
        for (std::size_t d = 0; d < D; ++d) points[d] = static_cast<double>(d + 1) / static_cast<double>(D);
    for (std::size_t d = 1; d < D; ++d)
        if (!(points[d] > points[d - 1])) detail::fail_at(path, lines.rows[0].first, "time points must increase");

    const std::size_t N = lines.rows.size() - 1;
    if (N == 0) throw input_error(path.string() + ": no curves");
    CurveMatrix values(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(D));
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < N; ++i) {
        const auto& [no, text] = lines.rows[i + 1];
        const auto cells = detail::split_csv(text);
        if (cells.size() != D + 1)
            detail::fail_at(path, no, "expected " + std::to_string(D + 1) + " fields, found " + std::to_string(cells.size()));
        if (cells[0].empty()) detail::fail_at(path, no, "empty unit id");
        if (auto [it, fresh] = seen.emplace(cells[0], no); !fresh)
            detail::fail_at(path, no, "duplicate unit id '" + cells[0] + "' (first on line " + std::to_string(it->second) + ")");
        for (std::size_t d = 0; d < D; ++d) {
            double v;
            if (!detail::parse_double(cells[d + 1], v) || !std::isfinite(v))
                detail::fail_at(path, no, "field " + std::to_string(d + 2) + " is not a finite number: '" + cells[d + 1] + "'");
            values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v;
        }
        ids.push_back(cells[0]);
    }
    return {TimeGrid::uniform(std::move(points)), std::move(values), std::move(ids)};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw input_error("cannot write " + path.string());
    out << text;
}

inline std::string curves_csv(const CurvePopulation& pop) {
    std::string s = "id";
    for (double t : pop.grid()->points()) s += "," + fmt(t);
    s += "\n";
    for (std::size_t k = 0; k < pop.size(); ++k) {
        s += pop.ids()[k];
        for (std::size_t d = 0; d < pop.dim(); ++d) s += "," + fmt(pop.row(k)[static_cast<Eigen::Index>(d)]);
        s += "\n";
    }
    return s;
}

// Two-column series "t,value".
inline std::string series_csv(const TimeGrid& grid, const Vector& values, const std::string& name = "value") {
    std::string s = "t," + name + "\n";
    for (std::size_t d = 0; d < grid.size(); ++d)
        s += fmt(grid.points()[d]) + "," + fmt(values[static_cast<Eigen::Index>(d)]) + "\n";
    return s;
}

inline Vector read_series(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    std::vector<double> v;
    for (std::size_t i = 1; i < lines.rows.size(); ++i) {
        const auto cells = detail::split_csv(lines.rows[i].second);
        double x;
        if (cells.size() != 2 || !detail::parse_double(cells[1], x))
            detail::fail_at(path, lines.rows[i].first, "expected 't,value'");
        v.push_back(x);
    }
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Two-column keyed file "unit_id,<value>" mapped onto population order.
inline std::vector<std::string> read_keyed_column(const std::filesystem::path& path, const CurvePopulation& pop) {
    const auto lines = detail::read_lines(path);
    if (lines.rows.empty()) throw input_error(path.string() + ": empty file");
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < pop.size(); ++k) index.emplace(pop.ids()[k], k);
    std::vector<std::string> out(pop.size());
    std::vector<bool> set(pop.size(), false);
    for (std::size_t i = 1; i < lines.rows.size(); ++i) {
        const auto& [no, text] = lines.rows[i];
        const auto cells = detail::split_csv(text);
        if (cells.size() != 2) detail::fail_at(path, no, "expected 2 fields");
        const auto it = index.find(cells[0]);
        if (it == index.end()) detail::fail_at(path, no, "unknown unit id '" + cells[0] + "'");
        if (set[it->second]) detail::fail_at(path, no, "unit id '" + cells[0] + "' listed twice");
        out[it->second] = cells[1];
        set[it->second] = true;
    }
    for (std::size_t k = 0; k < pop.size(); ++k)
        if (!set[k]) throw input_error(path.string() + ": no entry for unit '" + pop.ids()[k] + "'");
    return out;
}

inline std::vector<double> read_unit_values(const std::filesystem::path& path, const CurvePopulation& pop) {
    const auto raw = read_keyed_column(path, pop);
    std::vector<double> out(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k)
        if (!detail::parse_double(raw[k], out[k]))
            throw input_error(path.string() + ": value for unit '" + pop.ids()[k] + "' is not a number");
    return out;
}

// Strata CSV "unit_id,stratum" with strata numbered 1..H.
inline StrataSpec read_strata(const std::filesystem::path& path, const CurvePopulation& pop) {
    const auto raw = read_keyed_column(path, pop);
    std::vector<std::size_t> labels(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) {
        double h;
        if (!detail::parse_double(raw[k], h) || h < 1 || h != std::floor(h))
            throw input_error(path.string() + ": stratum of unit '" + pop.ids()[k] + "' must be a positive integer");
        labels[k] = static_cast<std::size_t>(h) - 1;
    }
    return StrataSpec::from_labels(std::move(labels));
}

inline std::string strata_csv(const StrataSpec& strata, const CurvePopulation& pop) {
    std::string s = "unit_id,stratum\n";
    for (std::size_t k = 0; k < strata.N(); ++k) s += pop.ids()[k] + "," + std::to_string(strata.label(k) + 1) + "\n";
    return s;
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw input_error(path.string() + ": " + e.what());
    }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Finite numbers as JSON numbers, NaN as null.
inline json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

} // namespace medcurve::io
