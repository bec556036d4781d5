#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "lgcp/lattice.hpp"

namespace lgcp {

// Raster in the ESRI-ASCII-like layout used for covariate and surface files:
// six header lines (nrow, ncol, xmin, xmax, ymin, ymax) followed by row-major
// values, row 0 along ymin.
struct Raster {
    Window window;
    Eigen::VectorXd values;  // length nrow*ncol
};

// Shortest exact decimal form used by every writer, so reruns are
// byte-identical.
std::string format_double(double v);

PointPattern read_pattern_csv(const std::string& path);
void write_pattern_csv(const std::string& path, const PointPattern& pattern);

Raster read_raster_csv(const std::string& path);
void write_raster_csv(const std::string& path, const Raster& raster);

// Wide CSV keyed by cell index: header "cell,<name>,<name>,...", one row per
// cell in order 0..n-1.
std::pair<std::vector<std::string>, Eigen::MatrixXd> read_wide_csv(const std::string& path);
void write_wide_csv(const std::string& path, const std::vector<std::string>& names,
                    const Eigen::MatrixXd& values);

// Assemble a covariate stack from per-covariate rasters, checking that all
// windows agree.
CovariateStack stack_rasters(const std::vector<std::string>& names,
                             const std::vector<Raster>& rasters, const Window& window);

}
