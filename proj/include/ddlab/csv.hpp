// Minimal CSV emission/ingestion. All floats are written with %.17g so files
// round-trip bit-exactly, which the run manifests rely on.
#pragma once

#include "ddlab/config.hpp"

#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddlab {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }

    std::vector<double> column_values(const std::string& name) const {
        const int c = column(name);
        if (c < 0) throw std::runtime_error("csv: missing column " + name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(c)]);
        return out;
    }
};

inline void write_csv_header(std::ostream& out, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) out << ',';
        out << names[i];
    }
    out << '\n';
}

inline void write_csv_row(std::ostream& out, const std::vector<double>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << ',';
        out << format_double(row[i]);
    }
    out << '\n';
}

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("csv: empty input");
    std::istringstream hdr(line);
    std::string cell;
    while (std::getline(hdr, cell, ',')) t.header.push_back(trim(cell));
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::istringstream row(line);
        std::vector<double> values;
        while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
        if (values.size() != t.header.size())
            throw std::runtime_error("csv: ragged row");
        t.rows.push_back(std::move(values));
    }
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv: " + path);
    return read_csv(in);
}

}  // namespace ddlab
