#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "damgt/binio.hpp"
#include "damgt/error.hpp"

namespace damgt {

namespace detail {

// Compact viridis-like ramp; t in [0, 1].
inline void colormap(double t, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
    static const double anchors[5][3] = {{0.267, 0.005, 0.329},
                                         {0.229, 0.322, 0.546},
                                         {0.127, 0.566, 0.551},
                                         {0.369, 0.789, 0.383},
                                         {0.993, 0.906, 0.144}};
    t = std::clamp(t, 0.0, 1.0);
    const double x = t * 4.0;
    const int lo = std::min(3, static_cast<int>(x));
    const double f = x - lo;
    auto mix = [&](int ch) { return anchors[lo][ch] * (1.0 - f) + anchors[lo + 1][ch] * f; };
    r = static_cast<std::uint8_t>(std::lround(255.0 * mix(0)));
    g = static_cast<std::uint8_t>(std::lround(255.0 * mix(1)));
    b = static_cast<std::uint8_t>(std::lround(255.0 * mix(2)));
}

}  // namespace detail

// Binary PPM (P6) heat map; one cell_px x cell_px block per matrix entry.
// Values are normalized by the matrix maximum unless vmax > 0 is given.
inline void write_heatmap_ppm(const std::string& path, const std::vector<double>& values,
                              std::size_t rows, std::size_t cols, double vmax = 0.0,
                              std::size_t cell_px = 32) {
    if (values.size() != rows * cols) throw Error("heatmap: value count does not match rows*cols");
    double top = vmax;
    if (top <= 0.0) {
        for (double v : values) top = std::max(top, v);
        if (top <= 0.0) top = 1.0;
    }
    const std::size_t w = cols * cell_px, h = rows * cell_px;
    AtomicFileWriter writer{path};
    auto& os = writer.stream();
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<std::uint8_t> line(w * 3);
    for (std::size_t py = 0; py < h; ++py) {
        const std::size_t i = py / cell_px;
        for (std::size_t px = 0; px < w; ++px) {
            const std::size_t j = px / cell_px;
            std::uint8_t r, g, b;
            detail::colormap(values[i * cols + j] / top, r, g, b);
            line[px * 3] = r;
            line[px * 3 + 1] = g;
            line[px * 3 + 2] = b;
        }
        os.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(line.size()));
    }
    writer.commit();
}

// Minimal SVG line chart for parameter sweeps.
inline void write_line_svg(const std::string& path, const std::vector<double>& xs,
                           const std::vector<double>& ys, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel) {
    if (xs.size() != ys.size() || xs.empty()) throw Error("line plot: need matching non-empty series");
    const double w = 640, h = 420, ml = 70, mr = 25, mt = 45, mb = 55;
    double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xmin = std::min(xmin, xs[i]);
        xmax = std::max(xmax, xs[i]);
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double yspan = ymax - ymin;
    ymin -= 0.05 * yspan;
    ymax += 0.05 * yspan;
    auto tx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto ty = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    AtomicFileWriter writer{path};
    auto& os = writer.stream();
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
       << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 14
       << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n";
    os << "<text x=\"18\" y=\"" << (mt + h - mb) / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " << (mt + h - mb) / 2
       << ")\">" << ylabel << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#2a6fb0\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) os << tx(xs[i]) << "," << ty(ys[i]) << " ";
    os << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        os << "<circle cx=\"" << tx(xs[i]) << "\" cy=\"" << ty(ys[i]) << "\" r=\"3.5\" fill=\"#2a6fb0\"/>\n";
        os << "<text x=\"" << tx(xs[i]) << "\" y=\"" << h - mb + 18
           << "\" text-anchor=\"middle\" font-size=\"11\">" << xs[i] << "</text>\n";
    }
    os << "<text x=\"" << ml - 8 << "\" y=\"" << ty(ymin) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << ymin << "</text>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << ty(ymax) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << ymax << "</text>\n";
    os << "</svg>\n";
    writer.commit();
}

}  // namespace damgt
