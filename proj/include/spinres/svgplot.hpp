#pragma once

#include <string>

#include "spinres/csvio.hpp"

namespace spinres {

// Renders a result table as a static SVG line plot (one polyline per y
// column, labeled axes, deterministic element ordering).
void write_svg_plot(const ExperimentResult& result, const std::string& path,
                    const std::string& title = "");

void write_svg_plot(const CsvTable& table, const std::string& path,
                    const std::string& title = "");

}  // namespace spinres
