#include "dmas/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dmas/errors.hpp"

namespace dmas {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                          "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

}  // namespace

std::string heatmap_svg(const Matrix& grid, const std::string& x_label,
                        const std::string& y_label) {
    const int cell = 28;
    const int margin = 70;
    const int w = margin + static_cast<int>(grid.cols) * cell + 20;
    const int h = margin + static_cast<int>(grid.rows) * cell + 20;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : grid.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double span = hi > lo ? hi - lo : 1.0;

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
           "\" height=\"" + std::to_string(h) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            double t = (grid.at(r, c) - lo) / span;
            int red = static_cast<int>(std::lround(255 * t));
            int blue = static_cast<int>(std::lround(255 * (1.0 - t)));
            char color[16];
            std::snprintf(color, sizeof color, "#%02x30%02x", red, blue);
            out += "<rect x=\"" + std::to_string(margin + static_cast<int>(c) * cell) + "\" y=\"" +
                   std::to_string(margin + static_cast<int>(r) * cell) + "\" width=\"" +
                   std::to_string(cell - 2) + "\" height=\"" + std::to_string(cell - 2) +
                   "\" fill=\"" + color + "\"><title>" + fmt(grid.at(r, c)) + "</title></rect>\n";
        }
    }
    for (std::size_t c = 0; c < grid.cols; ++c)
        out += "<text x=\"" + std::to_string(margin + static_cast<int>(c) * cell + cell / 2) +
               "\" y=\"" + std::to_string(margin - 8) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + std::to_string(c) + "</text>\n";
    for (std::size_t r = 0; r < grid.rows; ++r)
        out += "<text x=\"" + std::to_string(margin - 8) + "\" y=\"" +
               std::to_string(margin + static_cast<int>(r) * cell + cell / 2 + 4) +
               "\" font-size=\"11\" text-anchor=\"end\">" + std::to_string(r) + "</text>\n";
    out += "<text x=\"" + std::to_string(margin + static_cast<int>(grid.cols) * cell / 2) +
           "\" y=\"16\" font-size=\"12\" text-anchor=\"middle\">" + x_label + "</text>\n";
    out += "<text x=\"14\" y=\"" + std::to_string(margin + static_cast<int>(grid.rows) * cell / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
           std::to_string(margin + static_cast<int>(grid.rows) * cell / 2) + ")\">" + y_label +
           "</text>\n";
    out += "</svg>\n";
    return out;
}

std::string scatter_svg(const Matrix& points_xy, const std::vector<int>& labels) {
    if (points_xy.cols != 2) throw param_error("scatter_svg: points must be n x 2");
    if (labels.size() != points_xy.rows)
        throw param_error("scatter_svg: label count mismatch");
    const int size = 420;
    const int margin = 30;

    double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
    double lo_y = lo_x, hi_y = -lo_x;
    for (std::size_t i = 0; i < points_xy.rows; ++i) {
        lo_x = std::min(lo_x, points_xy.at(i, 0));
        hi_x = std::max(hi_x, points_xy.at(i, 0));
        lo_y = std::min(lo_y, points_xy.at(i, 1));
        hi_y = std::max(hi_y, points_xy.at(i, 1));
    }
    double span_x = hi_x > lo_x ? hi_x - lo_x : 1.0;
    double span_y = hi_y > lo_y ? hi_y - lo_y : 1.0;

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size) +
           "\" height=\"" + std::to_string(size) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < points_xy.rows; ++i) {
        double x = margin + (points_xy.at(i, 0) - lo_x) / span_x * (size - 2 * margin);
        double y = size - margin - (points_xy.at(i, 1) - lo_y) / span_y * (size - 2 * margin);
        const char* color = kPalette[static_cast<std::size_t>(labels[i] < 0 ? 7 : labels[i] % 8)];
        out += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"4\" fill=\"" + color +
               "\" fill-opacity=\"0.8\"/>\n";
    }
    out += "</svg>\n";
    return out;
}

std::string line_chart_svg(const std::vector<LineSeries>& series, const std::string& x_label,
                           const std::string& y_label) {
    const int w = 520, h = 360, margin = 50;
    double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
    double lo_y = lo_x, hi_y = -lo_x;
    for (const auto& s : series) {
        for (double v : s.x) {
            lo_x = std::min(lo_x, v);
            hi_x = std::max(hi_x, v);
        }
        for (double v : s.y) {
            lo_y = std::min(lo_y, v);
            hi_y = std::max(hi_y, v);
        }
    }
    if (!std::isfinite(lo_x)) lo_x = hi_x = 0.0;
    if (!std::isfinite(lo_y)) lo_y = hi_y = 0.0;
    double span_x = hi_x > lo_x ? hi_x - lo_x : 1.0;
    double span_y = hi_y > lo_y ? hi_y - lo_y : 1.0;

    auto px = [&](double x) { return margin + (x - lo_x) / span_x * (w - 2 * margin); };
    auto py = [&](double y) { return h - margin - (y - lo_y) / span_y * (h - 2 * margin); };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
           "\" height=\"" + std::to_string(h) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<line x1=\"" + fmt(margin) + "\" y1=\"" + fmt(h - margin) + "\" x2=\"" +
           fmt(w - margin) + "\" y2=\"" + fmt(h - margin) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + fmt(margin) + "\" y1=\"" + fmt(margin) + "\" x2=\"" + fmt(margin) +
           "\" y2=\"" + fmt(h - margin) + "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double tx = lo_x + span_x * tick / 4.0;
        double ty = lo_y + span_y * tick / 4.0;
        out += "<text x=\"" + fmt(px(tx)) + "\" y=\"" + fmt(h - margin + 16) +
               "\" font-size=\"10\" text-anchor=\"middle\">" + fmt(tx) + "</text>\n";
        out += "<text x=\"" + fmt(margin - 6) + "\" y=\"" + fmt(py(ty) + 3) +
               "\" font-size=\"10\" text-anchor=\"end\">" + fmt(ty) + "</text>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % 8];
        std::string points;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            points += fmt(px(s.x[i])) + "," + fmt(py(s.y[i]));
            if (i + 1 < s.x.size()) points += " ";
        }
        out += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + fmt(w - margin + 4) + "\" y=\"" +
               fmt(margin + 14.0 * static_cast<double>(si)) + "\" font-size=\"11\" fill=\"" +
               color + "\">" + s.name + "</text>\n";
    }
    out += "<text x=\"" + fmt(w / 2.0) + "\" y=\"" + fmt(h - 8.0) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + x_label + "</text>\n";
    out += "<text x=\"14\" y=\"" + fmt(h / 2.0) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " + fmt(h / 2.0) +
           ")\">" + y_label + "</text>\n";
    out += "</svg>\n";
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write file: " + path);
    out << content;
    if (!out) throw io_error("short write to file: " + path);
}

}  // namespace dmas
