#pragma once

// Matrix CSV: first line "rows,cols", then one comma-separated line per row.
// Values are printed with %.17g so a write/read round trip is bit exact.

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "attnlab/errors.hpp"
#include "attnlab/matrix.hpp"

namespace attnlab {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_matrix_csv(const Matrix& m, std::ostream& os) {
    os << m.rows() << "," << m.cols() << "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << ",";
            os << format_double(m(i, j));
        }
        os << "\n";
    }
}

inline std::string matrix_to_csv_string(const Matrix& m) {
    std::ostringstream ss;
    write_matrix_csv(m, ss);
    return ss.str();
}

inline Matrix read_matrix_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("matrix csv: empty input");
    std::size_t rows = 0, cols = 0;
    {
        std::istringstream header(line);
        char comma = 0;
        if (!(header >> rows >> comma >> cols) || comma != ',')
            throw ParseError("matrix csv: bad header '" + line + "'");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!std::getline(is, line))
            throw ParseError("matrix csv: expected " + std::to_string(rows) + " rows, got " + std::to_string(i));
        std::istringstream row(line);
        std::string cell;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!std::getline(row, cell, ','))
                throw ParseError("matrix csv: row " + std::to_string(i) + " has fewer than " +
                                 std::to_string(cols) + " columns");
            try {
                std::size_t used = 0;
                m(i, j) = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError("matrix csv: bad value '" + cell + "' at row " + std::to_string(i));
            }
        }
        if (std::getline(row, cell, ','))
            throw ParseError("matrix csv: row " + std::to_string(i) + " has more than " +
                             std::to_string(cols) + " columns");
    }
    if (!m.all_finite()) throw ParseError("matrix csv: non-finite entry");
    return m;
}

inline Matrix matrix_from_csv_string(const std::string& s) {
    std::istringstream ss(s);
    return read_matrix_csv(ss);
}

inline Matrix read_matrix_csv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "'");
    return read_matrix_csv(f);
}

inline void write_matrix_csv_file(const Matrix& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "' for writing");
    write_matrix_csv(m, f);
    if (!f) throw ParseError("write failed for '" + path + "'");
}

// Write to a sibling temp file, then rename over the destination, so readers
// never observe a partial file.
inline void atomic_write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ParseError("cannot open '" + tmp + "' for writing");
        f << content;
        f.flush();
        if (!f) throw ParseError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ParseError("rename '" + tmp + "' -> '" + path + "': " + ec.message());
}

} // namespace attnlab
