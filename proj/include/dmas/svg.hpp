#pragma once

#include <string>
#include <vector>

#include "dmas/numkit.hpp"

namespace dmas {

// Minimal hand-rolled SVG emitters for the analysis artifacts. No styling
// knobs; these exist to be glanced at, not themed.

// Grid of colored cells, one per matrix entry, low = dark, high = bright.
std::string heatmap_svg(const Matrix& grid, const std::string& x_label,
                        const std::string& y_label);

// Scatter of 2-D points colored by integer label.
std::string scatter_svg(const Matrix& points_xy, const std::vector<int>& labels);

struct LineSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Simple multi-series line chart with axis ticks.
std::string line_chart_svg(const std::vector<LineSeries>& series, const std::string& x_label,
                           const std::string& y_label);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace dmas
