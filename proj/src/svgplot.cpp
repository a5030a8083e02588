#include "spinres/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "spinres/errors.hpp"

namespace spinres {

namespace {

constexpr int kWidth = 720, kHeight = 480;
constexpr int kMarginL = 70, kMarginR = 20, kMarginT = 36, kMarginB = 50;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                         "#ff7f0e", "#8c564b"};

struct Range {
    double lo = 0.0, hi = 1.0;
    void expand(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (hi <= lo) {
            lo -= 0.5;
            hi += 0.5;
        }
        double m = 0.05 * (hi - lo);
        lo -= m;
        hi += m;
    }
};

double nice_step(double span) {
    double raw = span / 6.0;
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double r = raw / mag;
    if (r < 1.5) return mag;
    if (r < 3.5) return 2.0 * mag;
    if (r < 7.5) return 5.0 * mag;
    return 10.0 * mag;
}

}  // namespace

void write_svg_plot(const ExperimentResult& result, const std::string& path,
                    const std::string& title) {
    result.validate();
    if (result.rows.empty()) throw Error("svg plot: empty result");
    const std::size_t n_series = result.y_labels.size();

    Range xr{result.rows.front()[0], result.rows.front()[0]};
    Range yr{result.rows.front()[1], result.rows.front()[1]};
    for (const auto& r : result.rows) {
        xr.expand(r[0]);
        for (std::size_t s = 0; s < n_series; ++s) yr.expand(r[1 + s]);
    }
    xr.pad();
    yr.pad();

    auto px = [&](double x) {
        return kMarginL + (x - xr.lo) / (xr.hi - xr.lo) *
                              (kWidth - kMarginL - kMarginR);
    };
    auto py = [&](double y) {
        return kHeight - kMarginB -
               (y - yr.lo) / (yr.hi - yr.lo) * (kHeight - kMarginT - kMarginB);
    };

    std::ofstream out(path);
    if (!out) throw Error("cannot write SVG: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
        << "\" height=\"" << kHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        out << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" "
            << "font-family=\"sans-serif\" font-size=\"14\">" << title
            << "</text>\n";

    // Axes and grid.
    out << "<g stroke=\"#cccccc\" stroke-width=\"1\" font-family=\"sans-serif\""
        << " font-size=\"11\" fill=\"#333333\">\n";
    double xs = nice_step(xr.hi - xr.lo);
    for (double x = std::ceil(xr.lo / xs) * xs; x <= xr.hi; x += xs) {
        out << "<line x1=\"" << px(x) << "\" y1=\"" << py(yr.lo) << "\" x2=\""
            << px(x) << "\" y2=\"" << py(yr.hi) << "\"/>\n";
        out << "<text x=\"" << px(x) << "\" y=\"" << kHeight - kMarginB + 16
            << "\" text-anchor=\"middle\" stroke=\"none\">" << format_double(x)
            << "</text>\n";
    }
    double ys = nice_step(yr.hi - yr.lo);
    for (double y = std::ceil(yr.lo / ys) * ys; y <= yr.hi; y += ys) {
        out << "<line x1=\"" << px(xr.lo) << "\" y1=\"" << py(y) << "\" x2=\""
            << px(xr.hi) << "\" y2=\"" << py(y) << "\"/>\n";
        out << "<text x=\"" << kMarginL - 6 << "\" y=\"" << py(y) + 4
            << "\" text-anchor=\"end\" stroke=\"none\">" << format_double(y)
            << "</text>\n";
    }
    out << "</g>\n";
    out << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\""
        << kWidth - kMarginL - kMarginR << "\" height=\""
        << kHeight - kMarginT - kMarginB
        << "\" fill=\"none\" stroke=\"black\"/>\n";

    // Series.
    for (std::size_t s = 0; s < n_series; ++s) {
        out << "<polyline fill=\"none\" stroke=\"" << kColors[s % 6]
            << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& r : result.rows)
            out << px(r[0]) << "," << py(r[1 + s]) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << kWidth - kMarginR - 8 << "\" y=\""
            << kMarginT + 16 + 16 * s << "\" text-anchor=\"end\" "
            << "font-family=\"sans-serif\" font-size=\"12\" fill=\""
            << kColors[s % 6] << "\">" << result.y_labels[s] << "</text>\n";
    }

    // Axis labels.
    out << "<text x=\"" << (kMarginL + kWidth - kMarginR) / 2 << "\" y=\""
        << kHeight - 12 << "\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"12\">" << result.x_label
        << "</text>\n";
    out << "</svg>\n";
}

void write_svg_plot(const CsvTable& table, const std::string& path,
                    const std::string& title) {
    if (table.columns.size() < 2) throw Error("svg plot: need >= 2 columns");
    ExperimentResult r;
    r.x_label = table.columns[0];
    r.y_labels.assign(table.columns.begin() + 1, table.columns.end());
    r.rows = table.rows;
    write_svg_plot(r, path, title);
}

}  // namespace spinres
