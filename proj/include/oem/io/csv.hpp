#pragma once

// Numeric CSV datasets.
//
//   - one record per line, cells separated by ','
//   - blank lines and lines whose first non-blank character is '#' are skipped
//   - every record must have the same number of cells
//
// Observation files hold one d-vector per line. Sequence files carry an
// integer sequence id in the first column; consecutive lines with the same id
// form one sequence. Count files hold one nonnegative integer vector per line.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "oem/dirichlet.hpp"
#include "oem/error.hpp"
#include "oem/expfam.hpp"

namespace oem::io {

struct NumericTable {
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> lines;  // 1-based source line of each row
    std::size_t columns = 0;
    std::string source;
};

inline std::string location(const std::string& source, std::size_t line, std::size_t column) {
    std::string where = source.empty() ? std::string("<input>") : source;
    where += ":" + std::to_string(line);
    if (column > 0) where += ":" + std::to_string(column);
    return where;
}

inline double parse_double(std::string_view cell, const std::string& where) {
    std::size_t b = 0, e = cell.size();
    while (b < e && (cell[b] == ' ' || cell[b] == '\t')) ++b;
    while (e > b && (cell[e - 1] == ' ' || cell[e - 1] == '\t' || cell[e - 1] == '\r')) --e;
    cell = cell.substr(b, e - b);
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
        throw ParseError(where + ": '" + std::string(cell) + "' is not a number");
    if (!std::isfinite(value)) throw ParseError(where + ": non-finite value");
    return value;
}

inline NumericTable read_numeric_csv(std::istream& in, const std::string& source = {}) {
    NumericTable table;
    table.source = source;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::vector<double> row;
        std::size_t start = 0;
        for (std::size_t col = 1;; ++col) {
            const auto comma = line.find(',', start);
            const std::string_view cell(line.data() + start, (comma == std::string::npos ? line.size() : comma) - start);
            row.push_back(parse_double(cell, location(source, line_no, col)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (table.rows.empty())
            table.columns = row.size();
        else if (row.size() != table.columns)
            throw ParseError(location(source, line_no, 0) + ": expected " + std::to_string(table.columns) +
                             " columns, found " + std::to_string(row.size()));
        table.rows.push_back(std::move(row));
        table.lines.push_back(line_no);
    }
    if (in.bad()) throw IoError(location(source, line_no, 0) + ": read failed");
    return table;
}

inline NumericTable read_numeric_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_numeric_csv(in, path.string());
}

inline std::vector<Observation> to_observations(const NumericTable& t) {
    if (t.rows.empty()) throw ParseError(location(t.source, 0, 0) + ": no records");
    std::vector<Observation> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) out.push_back(Eigen::Map<const Vector>(row.data(), static_cast<Eigen::Index>(row.size())));
    return out;
}

inline long long integer_cell(const NumericTable& t, std::size_t r, std::size_t c, const char* what) {
    const double v = t.rows[r][c];
    if (v != std::floor(v) || std::abs(v) > 9.0e15)
        throw ParseError(location(t.source, t.lines[r], c + 1) + ": " + what + " must be an integer");
    return static_cast<long long>(v);
}

// Consecutive rows sharing an id form one sequence; an id may not reappear
// after another id has started.
inline std::vector<Sequence> to_sequences(const NumericTable& t, std::vector<long long>* ids = nullptr) {
    if (t.rows.empty()) throw ParseError(location(t.source, 0, 0) + ": no records");
    if (t.columns < 2) throw ParseError(location(t.source, t.lines.front(), 0) + ": sequence files need an id column and data");
    std::vector<Sequence> out;
    std::vector<long long> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const long long id = integer_cell(t, r, 0, "sequence id");
        if (seen.empty() || seen.back() != id) {
            for (long long s : seen)
                if (s == id)
                    throw ParseError(location(t.source, t.lines[r], 1) + ": sequence id " + std::to_string(id) +
                                     " reappears after other sequences");
            seen.push_back(id);
            out.emplace_back();
        }
        out.back().push_back(
            Eigen::Map<const Vector>(t.rows[r].data() + 1, static_cast<Eigen::Index>(t.columns - 1)));
    }
    if (ids) *ids = std::move(seen);
    return out;
}

inline std::vector<CountVector> to_counts(const NumericTable& t) {
    if (t.rows.empty()) throw ParseError(location(t.source, 0, 0) + ": no records");
    std::vector<CountVector> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        std::vector<std::int64_t> counts(t.columns);
        for (std::size_t c = 0; c < t.columns; ++c) {
            counts[c] = integer_cell(t, r, c, "count");
            if (counts[c] < 0) throw ParseError(location(t.source, t.lines[r], c + 1) + ": counts must be nonnegative");
        }
        try {
            out.emplace_back(std::move(counts));
        } catch (const InvalidArgument& e) {
            throw ParseError(location(t.source, t.lines[r], 0) + ": " + e.what());
        }
    }
    return out;
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw IoError("format_double: conversion failed");
    return std::string(buf, ptr);
}

inline void write_row(std::ostream& os, const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << format_double(v[i]);
    }
}

inline void write_observations(std::ostream& os, std::span<const Observation> data) {
    os << "# observations: " << data.size() << ", dim: " << (data.empty() ? 0 : data.front().size()) << '\n';
    for (const auto& x : data) {
        write_row(os, x);
        os << '\n';
    }
}

// Sequence ids are 1-based positions; empty sequences are not representable
// and are rejected.
inline void write_sequences(std::ostream& os, std::span<const Sequence> data) {
    os << "# sequences: " << data.size() << ", columns: id then observation\n";
    for (std::size_t n = 0; n < data.size(); ++n) {
        if (data[n].empty()) throw InvalidArgument("write_sequences: sequence " + std::to_string(n + 1) + " is empty");
        for (const auto& x : data[n]) {
            os << (n + 1) << ',';
            write_row(os, x);
            os << '\n';
        }
    }
}

inline void write_counts(std::ostream& os, std::span<const CountVector> data) {
    os << "# documents: " << data.size() << '\n';
    for (const auto& v : data) {
        for (std::size_t j = 0; j < v.counts().size(); ++j) {
            if (j) os << ',';
            os << v.counts()[j];
        }
        os << '\n';
    }
}

template <class Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    writer(out);
    out.flush();
    if (!out) throw IoError("write to " + path.string() + " failed");
}

}  // namespace oem::io
