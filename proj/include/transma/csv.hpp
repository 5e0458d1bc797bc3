#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "transma/types.hpp"

namespace transma::io {

/// Doubles are written with 17 significant digits so CSV round-trips are
/// value-exact.
inline std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    cells.push_back(cell);
    return cells;
}

inline double parse_cell(const std::string& cell, std::size_t line, std::size_t column) {
    if (cell.empty()) throw ParseError("missing cell", line, column);
    std::size_t consumed = 0;
    double value = 0.0;
    try {
        value = std::stod(cell, &consumed);
    } catch (const std::exception&) {
        throw ParseError("cannot parse '" + cell + "' as a number", line, column);
    }
    if (consumed != cell.size())
        throw ParseError("trailing characters in '" + cell + "'", line, column);
    return value;
}

}  // namespace detail

/// Reads one domain from a `y,x1,...,xp` CSV file.
inline DomainData ingest_csv(const std::string& path, int id = 0) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalidError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw HeaderMismatchError(path + ": empty file");
    const std::vector<std::string> header = detail::split_line(line);
    if (header.size() < 2 || header[0] != "y")
        throw HeaderMismatchError(path + ": header must start with 'y,x1,...'");
    for (std::size_t j = 1; j < header.size(); ++j) {
        if (header[j] != "x" + std::to_string(j))
            throw HeaderMismatchError(path + ": expected column 'x" + std::to_string(j) +
                                      "', got '" + header[j] + "'");
    }
    const std::size_t p = header.size() - 1;

    std::vector<double> ys;
    std::vector<double> xs;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::vector<std::string> cells = detail::split_line(line);
        if (cells.size() != p + 1)
            throw ParseError("expected " + std::to_string(p + 1) + " cells, got " +
                                 std::to_string(cells.size()),
                             line_no, cells.size());
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const double value = detail::parse_cell(cells[j], line_no, j + 1);
            if (j == 0)
                ys.push_back(value);
            else
                xs.push_back(value);
        }
    }
    if (ys.empty()) throw ParseError("no data rows", line_no, 1);

    DomainData data;
    data.id = id;
    data.y = Eigen::Map<const Vector>(ys.data(), static_cast<Index>(ys.size()));
    data.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                            Eigen::RowMajor>>(
        xs.data(), static_cast<Index>(ys.size()), static_cast<Index>(p));
    data.validate();
    return data;
}

/// Writes a domain back out in the ingestion schema.
inline void write_domain_csv(const std::string& path, const DomainData& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigInvalidError("cannot open '" + path + "' for writing");
    out << "y";
    for (Index j = 0; j < data.p(); ++j) out << ",x" << (j + 1);
    out << "\n";
    for (Index i = 0; i < data.n(); ++i) {
        out << format_double(data.y[i]);
        for (Index j = 0; j < data.p(); ++j) out << "," << format_double(data.X(i, j));
        out << "\n";
    }
}

/// Minimal row sink for the result tables; always `\n` endings.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns)
        : out_(path, std::ios::binary) {
        if (!out_) throw ConfigInvalidError("cannot open '" + path + "' for writing");
        write_row(columns);
    }

    void write_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

}  // namespace transma::io
