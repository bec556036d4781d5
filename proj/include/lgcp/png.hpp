#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace lgcp {

// Minimal PNG writer (8-bit RGB, filter type 0 rows, zlib deflate).
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

// Cell values as an upscaled heatmap, lattice row 0 at the bottom edge,
// with a vertical colour ramp bar on the right.
void write_heatmap_png(const std::string& path, const Eigen::VectorXd& values, int nrow, int ncol,
                       int cell_pixels = 12);

struct Curve {
    std::vector<double> x, y;
    std::uint8_t r = 31, g = 119, b = 180;
};

// Line chart on a white canvas with a plain frame, no text.
void write_curves_png(const std::string& path, const std::vector<Curve>& curves, int width = 640,
                      int height = 420);

}
