#pragma once

#include <map>
#include <string>
#include <vector>

namespace spinres {

// Labeled sampled curve; the canonical result of every experiment.
struct ExperimentResult {
    std::string x_label;
    std::vector<std::string> y_labels;
    std::vector<std::vector<double>> rows;  // each row: x, y0, y1, ...
    std::map<std::string, std::string> metadata;

    void validate() const;
};

// Deterministic number formatting (shortest round-trip, C locale) so a
// rerun with the same seed produces a byte-identical file.
std::string format_double(double v);

void write_csv(const ExperimentResult& result, const std::string& path);
// Metadata sidecar (JSON) next to the CSV.
void write_sidecar(const ExperimentResult& result, const std::string& path);

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::string& path);

}  // namespace spinres
