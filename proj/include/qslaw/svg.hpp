// SPDX-License-Identifier: Apache-2.0
//
// Minimal static SVG line and bar charts for the analyze/report subcommands.
// Output bytes are deterministic for identical inputs.

#pragma once

#include <string>
#include <vector>

namespace qslaw {

struct LineSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct BarSeries {
    std::string label;
    std::vector<double> values;  // one per category
};

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<LineSeries>& series);

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series);

}  // namespace qslaw
