#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "degboot/error.hpp"
#include "degboot/simulate.hpp"

namespace degboot {
namespace io {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(const std::string& text, const std::string& what) {
    double v = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || text.empty()) throw ValidationError("cannot parse " + what + " from '" + text + "'");
    return v;
}

inline long long parse_int(const std::string& text, const std::string& what) {
    long long v = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || text.empty()) throw ValidationError("cannot parse " + what + " from '" + text + "'");
    return v;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    return in;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/**
 * Reads a panel from CSV: header "z_1,...,z_m,y_1,...,y_k", one row per
 * period. Blank lines and lines starting with '#' are skipped.
 */
inline PanelData read_panel_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    std::vector<std::string> header;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        header = split(t, ',');
        break;
    }
    if (header.empty()) throw ValidationError(source + ": missing header line");
    std::size_t m = 0;
    while (m < header.size() && header[m] == "z_" + std::to_string(m + 1)) ++m;
    std::size_t k = 0;
    while (m + k < header.size() && header[m + k] == "y_" + std::to_string(k + 1)) ++k;
    if (m == 0 || k == 0 || m + k != header.size())
        throw ValidationError(source + ": header must read z_1,...,z_m,y_1,...,y_k");

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto cells = split(t, ',');
        if (cells.size() != m + k)
            throw ValidationError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(m + k) +
                                  " columns, found " + std::to_string(cells.size()));
        std::vector<double> row(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c)
            row[c] = parse_double(cells[c], source + ":" + std::to_string(line_no) + " value");
        rows.push_back(std::move(row));
    }
    PanelData panel;
    const auto t_rows = static_cast<Eigen::Index>(rows.size());
    panel.z.resize(t_rows, static_cast<Eigen::Index>(m));
    panel.y.resize(t_rows, static_cast<Eigen::Index>(k));
    for (Eigen::Index r = 0; r < t_rows; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        for (std::size_t c = 0; c < m; ++c) panel.z(r, static_cast<Eigen::Index>(c)) = row[c];
        for (std::size_t c = 0; c < k; ++c) panel.y(r, static_cast<Eigen::Index>(c)) = row[m + c];
    }
    panel.validate();
    return panel;
}

inline PanelData read_panel_csv(const std::string& path) {
    auto in = open_input(path);
    return read_panel_csv(in, path);
}

/// Writes a panel with optional '#' comment lines ahead of the header.
inline void write_panel_csv(std::ostream& out, const PanelData& panel, const std::vector<std::string>& comments = {}) {
    for (const auto& c : comments) out << "# " << c << '\n';
    for (Eigen::Index j = 0; j < panel.m(); ++j) out << (j ? "," : "") << "z_" << j + 1;
    for (Eigen::Index j = 0; j < panel.k(); ++j) out << ",y_" << j + 1;
    out << '\n';
    for (Eigen::Index r = 0; r < panel.size(); ++r) {
        for (Eigen::Index j = 0; j < panel.m(); ++j) out << (j ? "," : "") << format_double(panel.z(r, j));
        for (Eigen::Index j = 0; j < panel.k(); ++j) out << ',' << format_double(panel.y(r, j));
        out << '\n';
    }
}

inline void write_panel_csv(const std::string& path, const PanelData& panel, const std::vector<std::string>& comments = {}) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    write_panel_csv(out, panel, comments);
    if (!out) throw ValidationError("write failed for '" + path + "'");
}

/// Plain "key = value" lines; '#' starts a comment. Duplicate keys are an error.
inline std::map<std::string, std::string> read_key_values(std::istream& in, const std::string& source = "<stream>") {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError(source + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ValidationError(source + ":" + std::to_string(line_no) + ": empty key");
        if (kv.count(key)) throw ValidationError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        kv.emplace(std::move(key), trim(t.substr(eq + 1)));
    }
    return kv;
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
    auto in = open_input(path);
    return read_key_values(in, path);
}

/// Parses "a,b;c,d" into a matrix with rows separated by ';'.
inline Matrix parse_matrix(const std::string& text, const std::string& what) {
    const auto rows = split(text, ';');
    std::vector<std::vector<double>> vals;
    for (const auto& r : rows) {
        std::vector<double> row;
        for (const auto& c : split(r, ',')) row.push_back(parse_double(c, what));
        vals.push_back(std::move(row));
    }
    const std::size_t cols = vals.front().size();
    for (const auto& r : vals)
        if (r.size() != cols) throw ValidationError(what + ": rows have different lengths");
    Matrix m(static_cast<Eigen::Index>(vals.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < vals.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vals[r][c];
    return m;
}

/**
 * Design file, key = value:
 *   name     = custom
 *   loadings = 1,0;0,1;1,1      (k rows of p entries)
 *   garch    = 0.2,0.2,0.6;0.2,0.4,0.4   (omega,alpha,beta per factor)
 *   idio_var = 0.5              (optional)
 */
inline DesignSpec design_from_key_values(const std::map<std::string, std::string>& kv, const std::string& source) {
    for (const auto& [key, value] : kv)
        if (key != "name" && key != "loadings" && key != "garch" && key != "idio_var")
            throw ValidationError(source + ": unknown key '" + key + "'");
    if (!kv.count("loadings") || !kv.count("garch")) throw ValidationError(source + ": needs loadings and garch");
    DesignSpec d;
    d.name = kv.count("name") ? kv.at("name") : "custom";
    d.loadings = parse_matrix(kv.at("loadings"), source + " loadings");
    const Matrix g = parse_matrix(kv.at("garch"), source + " garch");
    if (g.cols() != 3) throw ValidationError(source + ": each garch entry needs omega,alpha,beta");
    for (Eigen::Index r = 0; r < g.rows(); ++r) d.garch.push_back({g(r, 0), g(r, 1), g(r, 2)});
    if (kv.count("idio_var")) d.idio_var = parse_double(kv.at("idio_var"), source + " idio_var");
    d.validate();
    return d;
}

inline DesignSpec read_design_file(const std::string& path) {
    return design_from_key_values(read_key_values(path), path);
}

}  // namespace io
}  // namespace degboot
