#pragma once

// Learning-curve plots. Input is a curves CSV with header `method,t,nll`;
// output is an SVG with one polyline per method and a legend.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oem/error.hpp"
#include "oem/io/csv.hpp"

namespace oem::io {

struct Curve {
    std::string method;
    std::vector<double> t;
    std::vector<double> nll;
};

inline std::vector<Curve> read_curves(std::istream& in, const std::string& source = {}) {
    std::vector<Curve> curves;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        if (!header) {
            if (line != "method,t,nll")
                throw ParseError(location(source, line_no, 0) + ": expected header 'method,t,nll'");
            header = true;
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
            throw ParseError(location(source, line_no, 0) + ": expected 3 columns");
        const std::string method = line.substr(0, c1);
        if (method.empty()) throw ParseError(location(source, line_no, 1) + ": empty method name");
        const double t = parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1), location(source, line_no, 2));
        const double v = parse_double(std::string_view(line).substr(c2 + 1), location(source, line_no, 3));
        auto it = std::find_if(curves.begin(), curves.end(), [&](const Curve& c) { return c.method == method; });
        if (it == curves.end()) {
            curves.push_back({method, {}, {}});
            it = std::prev(curves.end());
        }
        it->t.push_back(t);
        it->nll.push_back(v);
    }
    if (curves.empty()) throw ParseError(location(source, line_no, 0) + ": no data rows");
    return curves;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string render_svg(const std::vector<Curve>& curves, const std::string& title = {}) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    const double width = 720, height = 440, left = 70, right = 180, top = 40, bottom = 50;
    double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin, ymin = tmin, ymax = -tmin;
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.t.size(); ++i) {
            tmin = std::min(tmin, c.t[i]);
            tmax = std::max(tmax, c.t[i]);
            ymin = std::min(ymin, c.nll[i]);
            ymax = std::max(ymax, c.nll[i]);
        }
    if (tmax == tmin) tmax = tmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double t) { return left + (t - tmin) / (tmax - tmin) * pw; };
    auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        os << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double t = tmin + (tmax - tmin) * i / 4.0;
        const double y = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << sx(t) << "\" y=\"" << top + ph + 18 << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
           << t << "</text>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << sy(y) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
           << y << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">iteration</text>\n";
    os << "<text x=\"16\" y=\"" << top + ph / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
       << top + ph / 2 << ")\" text-anchor=\"middle\">nll</text>\n";
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const char* color = palette[i % (sizeof palette / sizeof *palette)];
        os << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t j = 0; j < c.t.size(); ++j) os << (j ? " " : "") << sx(c.t[j]) << ',' << sy(c.nll[j]);
        os << "\"/>\n";
        const double ly = top + 16 + 18.0 * static_cast<double>(i);
        os << "<g class=\"legend-entry\"><line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 36
           << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>"
           << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
           << xml_escape(c.method) << "</text></g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// Reads `csv_path` and writes the plot; nothing is written if parsing fails.
inline void plot_curves(const std::filesystem::path& csv_path, const std::filesystem::path& svg_path,
                        const std::string& title = {}) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open " + csv_path.string());
    const auto curves = read_curves(in, csv_path.string());
    const std::string svg = render_svg(curves, title);
    std::ofstream out(svg_path, std::ios::binary);
    if (!out) throw IoError("cannot open " + svg_path.string() + " for writing");
    out << svg;
    if (!out) throw IoError("write to " + svg_path.string() + " failed");
}

}  // namespace oem::io
