// SPDX-License-Identifier: Apache-2.0

#include "qslaw/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace qslaw {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

struct Range {
    double lo = 0, hi = 1;
    double span() const { return hi - lo; }
};

Range nice_range(double lo, double hi) {
    if (!(hi > lo)) {
        hi = lo + 1.0;
        lo -= 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    return Range{lo - pad, hi + pad};
}

std::string header(const std::string& title) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
         num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kWidth / 2) +
         "\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">" +
         escape(title) + "</text>\n";
    return s;
}

std::string axes(const Range& xr, const Range& yr, const std::string& x_label,
                 const std::string& y_label) {
    std::string s;
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" +
         num(y0) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" +
         num(y1) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xr.lo + xr.span() * i / 4.0;
        const double px = x0 + (x1 - x0) * i / 4.0;
        s += "<text x=\"" + num(px) + "\" y=\"" + num(y0 + 16) +
             "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" + num(fx) +
             "</text>\n";
        const double fy = yr.lo + yr.span() * i / 4.0;
        const double py = y0 - (y0 - y1) * i / 4.0;
        s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py + 3) +
             "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" + num(fy) +
             "</text>\n";
    }
    s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 8) +
         "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
    s += "<text x=\"14\" y=\"" + num((y0 + y1) / 2) +
         "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         num((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
    return s;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<LineSeries>& series) {
    double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
    bool first = true;
    for (const LineSeries& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xlo = xhi = s.x[i];
                ylo = yhi = s.y[i];
                first = false;
            }
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, s.y[i]);
            yhi = std::max(yhi, s.y[i]);
        }
    const Range xr = nice_range(xlo, xhi), yr = nice_range(ylo, yhi);
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

    std::string svg = header(title) + axes(xr, yr, x_label, y_label);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const LineSeries& s = series[si];
        const char* color = kPalette[si % 6];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double px = x0 + (x1 - x0) * (s.x[i] - xr.lo) / xr.span();
            const double py = y0 - (y0 - y1) * (s.y[i] - yr.lo) / yr.span();
            pts += num(px) + "," + num(py) + " ";
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        const double ly = kTop + 14.0 * static_cast<double>(si);
        svg += "<rect x=\"" + num(x1 - 130) + "\" y=\"" + num(ly) +
               "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        svg += "<text x=\"" + num(x1 - 116) + "\" y=\"" + num(ly + 9) +
               "\" font-family=\"sans-serif\" font-size=\"10\">" + escape(s.label) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series) {
    double yhi = 0;
    for (const BarSeries& s : series)
        for (const double v : s.values) yhi = std::max(yhi, v);
    if (yhi <= 0) yhi = 1;
    const Range yr{0, yhi * 1.1};
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

    std::string svg = header(title);
    svg += axes(Range{0, static_cast<double>(categories.size())}, yr, "", "");

    const double cat_w = (x1 - x0) / static_cast<double>(categories.size());
    const double bar_w = cat_w * 0.8 / static_cast<double>(series.size());
    for (std::size_t ci = 0; ci < categories.size(); ++ci) {
        for (std::size_t si = 0; si < series.size(); ++si) {
            const double v = series[si].values[ci];
            const double h = (y0 - y1) * (v - yr.lo) / yr.span();
            const double bx =
                x0 + cat_w * (static_cast<double>(ci) + 0.1) + bar_w * static_cast<double>(si);
            svg += "<rect x=\"" + num(bx) + "\" y=\"" + num(y0 - h) + "\" width=\"" +
                   num(bar_w) + "\" height=\"" + num(h) + "\" fill=\"" +
                   kPalette[si % 6] + "\"/>\n";
        }
        svg += "<text x=\"" + num(x0 + cat_w * (static_cast<double>(ci) + 0.5)) + "\" y=\"" +
               num(y0 + 16) + "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" +
               escape(categories[ci]) + "</text>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const double ly = kTop + 14.0 * static_cast<double>(si);
        svg += "<rect x=\"" + num(x1 - 130) + "\" y=\"" + num(ly) +
               "\" width=\"10\" height=\"10\" fill=\"" + kPalette[si % 6] + "\"/>\n";
        svg += "<text x=\"" + num(x1 - 116) + "\" y=\"" + num(ly + 9) +
               "\" font-family=\"sans-serif\" font-size=\"10\">" + escape(series[si].label) +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace qslaw
