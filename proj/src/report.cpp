#include "vaedef/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vaedef::report {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void Csv::add_row(std::vector<std::string> row) {
    if (row.size() != header.size())
        throw std::invalid_argument("csv row width does not match header");
    rows.push_back(std::move(row));
}

namespace {

void check_field(const std::string& f) {
    if (f.find(',') != std::string::npos || f.find('\n') != std::string::npos ||
        f.find('"') != std::string::npos)
        throw std::invalid_argument("csv field contains a delimiter: " + f);
}

void write_line(std::ofstream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        check_field(fields[i]);
        if (i) out << ',';
        out << fields[i];
    }
    out << '\n';
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

}  // namespace

void write_csv(const Csv& csv, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    write_line(out, csv.header);
    for (const auto& row : csv.rows) {
        if (row.size() != csv.header.size())
            throw std::invalid_argument("csv row width does not match header");
        write_line(out, row);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Csv read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    Csv csv;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
    csv.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split_line(line);
        if (row.size() != csv.header.size())
            throw std::runtime_error("ragged csv row in " + path);
        csv.rows.push_back(std::move(row));
    }
    return csv;
}

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 55;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

struct Scale {
    double lo, hi;
    int px_lo, px_hi;
    double at(double v) const {
        const double t = (hi > lo) ? (v - lo) / (hi - lo) : 0.5;
        return px_lo + t * (px_hi - px_lo);
    }
};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

void svg_open(std::ostringstream& out, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << esc(title) << "</text>\n";
}

void svg_axes(std::ostringstream& out, const Scale& sx, const Scale& sy,
              const std::string& x_label, const std::string& y_label) {
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom
        << "\" x2=\"" << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\""
        << kMarginLeft << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double vx = sx.lo + (sx.hi - sx.lo) * i / 4.0;
        const double vy = sy.lo + (sy.hi - sy.lo) * i / 4.0;
        out << "<text x=\"" << sx.at(vx) << "\" y=\"" << kHeight - kMarginBottom + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_double(std::round(vx * 1e4) / 1e4) << "</text>\n"
            << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << sy.at(vy) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_double(std::round(vy * 1e4) / 1e4) << "</text>\n";
    }
    out << "<text x=\"" << (kMarginLeft + kWidth - kMarginRight) / 2 << "\" y=\""
        << kHeight - 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"13\">" << esc(x_label) << "</text>\n"
        << "<text x=\"18\" y=\"" << (kMarginTop + kHeight - kMarginBottom) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << (kMarginTop + kHeight - kMarginBottom) / 2
        << ")\">" << esc(y_label) << "</text>\n";
}

void svg_write(const std::string& path, const std::ostringstream& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << body.str() << "</svg>\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
    if (series.empty()) throw std::invalid_argument("line chart needs at least one series");
    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size() || s.x.empty())
            throw std::invalid_argument("series '" + s.label + "' is empty or ragged");
        for (double v : s.x) x_lo = std::min(x_lo, v), x_hi = std::max(x_hi, v);
        for (double v : s.y) y_lo = std::min(y_lo, v), y_hi = std::max(y_hi, v);
    }
    if (x_hi <= x_lo) x_hi = x_lo + 1.0;
    if (y_hi <= y_lo) y_hi = y_lo + 1.0;
    const Scale sx{x_lo, x_hi, kMarginLeft, kWidth - kMarginRight};
    const Scale sy{y_lo, y_hi, kHeight - kMarginBottom, kMarginTop};
    std::ostringstream out;
    svg_open(out, title);
    svg_axes(out, sx, sy, x_label, y_label);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const std::string color =
            s.color.empty() ? kPalette[si % 5] : (si == 0 ? s.color : kPalette[si % 5]);
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << sx.at(s.x[i]) << ',' << sy.at(s.y[i]) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << kWidth - kMarginRight - 6 << "\" y=\""
            << kMarginTop + 16 * (si + 1) << "\" text-anchor=\"end\" "
            << "font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">"
            << esc(s.label) << "</text>\n";
    }
    svg_write(path, out);
}

void write_bar_chart_svg(const std::string& path, const std::string& title,
                         const std::string& y_label,
                         const std::vector<std::string>& labels,
                         const std::vector<double>& values) {
    if (labels.size() != values.size() || labels.empty())
        throw std::invalid_argument("bar chart labels/values mismatch");
    double y_lo = 0.0, y_hi = -1e300;
    for (double v : values) {
        y_lo = std::min(y_lo, v);
        y_hi = std::max(y_hi, v);
    }
    if (y_hi <= y_lo) y_hi = y_lo + 1.0;
    const Scale sy{y_lo, y_hi, kHeight - kMarginBottom, kMarginTop};
    const Scale sx{0.0, static_cast<double>(labels.size()), kMarginLeft,
                   kWidth - kMarginRight};
    std::ostringstream out;
    svg_open(out, title);
    svg_axes(out, sx, sy, "", y_label);
    const double slot = (kWidth - kMarginRight - kMarginLeft) / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double x0 = kMarginLeft + slot * i + slot * 0.15;
        const double y_top = sy.at(values[i]);
        const double y_base = sy.at(0.0);
        out << "<rect x=\"" << x0 << "\" y=\"" << std::min(y_top, y_base) << "\" width=\""
            << slot * 0.7 << "\" height=\"" << std::abs(y_base - y_top) << "\" fill=\""
            << kPalette[i % 5] << "\"/>\n"
            << "<text x=\"" << x0 + slot * 0.35 << "\" y=\"" << kHeight - kMarginBottom + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << esc(labels[i]) << "</text>\n"
            << "<text x=\"" << x0 + slot * 0.35 << "\" y=\"" << y_top - 4
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_double(std::round(values[i] * 1e4) / 1e4) << "</text>\n";
    }
    svg_write(path, out);
}

}  // namespace vaedef::report
