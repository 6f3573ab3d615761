#pragma once

#include <string>
#include <vector>

namespace vaedef::report {

// Shortest decimal string that parses back to the same double ('.' decimal,
// no locale involvement).
std::string format_double(double v);

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
};

void write_csv(const Csv& csv, const std::string& path);
Csv read_csv(const std::string& path);

// Minimal figure emitter: axes, tick labels, one polyline per series or one
// bar per labelled value.
struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::string color = "#1f77b4";
};

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

void write_bar_chart_svg(const std::string& path, const std::string& title,
                         const std::string& y_label,
                         const std::vector<std::string>& labels,
                         const std::vector<double>& values);

}  // namespace vaedef::report
