#include "spinres/csvio.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spinres/errors.hpp"

namespace spinres {

void ExperimentResult::validate() const {
    const std::size_t width = 1 + y_labels.size();
    for (const auto& r : rows)
        if (r.size() != width) throw Error("result rows are not rectangular");
}

std::string format_double(double v) {
    char buf[40];
    // Shortest representation that round-trips a double.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) break;
    }
    return buf;
}

void write_csv(const ExperimentResult& result, const std::string& path) {
    result.validate();
    std::ofstream out(path);
    if (!out) throw Error("cannot write CSV: " + path);
    out << result.x_label;
    for (const auto& y : result.y_labels) out << "," << y;
    out << "\n";
    for (const auto& r : result.rows) {
        for (std::size_t k = 0; k < r.size(); ++k) {
            if (k) out << ",";
            out << format_double(r[k]);
        }
        out << "\n";
    }
}

void write_sidecar(const ExperimentResult& result, const std::string& path) {
    nlohmann::json j;
    for (const auto& [k, v] : result.metadata) j[k] = v;
    std::ofstream out(path);
    if (!out) throw Error("cannot write sidecar: " + path);
    out << j.dump(2) << "\n";
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CSV: " + path);
    CsvTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (lineno == 1) {
            t.columns = cells;
            continue;
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            char* end = nullptr;
            double v = std::strtod(cells[c].c_str(), &end);
            if (end == cells[c].c_str())
                throw ParseError("CSV: non-numeric cell", lineno,
                                 static_cast<int>(c + 1));
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.columns.empty()) throw ParseError("CSV: missing header", 1, 1);
    return t;
}

}  // namespace spinres
