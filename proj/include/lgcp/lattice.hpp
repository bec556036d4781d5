#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lgcp/errors.hpp"

namespace lgcp {

// Observation window gridded into nrow x ncol cells. Cells are indexed
// row-major, index = row*ncol + col, with row 0 along ymin.
struct Window {
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    int nrow = 0, ncol = 0;

    int cells() const { return nrow * ncol; }
    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double dx() const { return width() / ncol; }
    double dy() const { return height() / nrow; }
    double cell_area() const { return width() * height() / cells(); }

    void validate() const;

    // Cell index for a location, or -1 if it lies outside the window.
    // Cells are half-open along both axes: a point on a shared edge belongs
    // to the cell with the larger index. Points exactly on xmax/ymax are on
    // the window boundary and are assigned to the last cell along that axis.
    int cell_index(double x, double y) const;
};

struct PointPattern {
    std::vector<double> x, y;
    std::string label;

    std::size_t size() const { return x.size(); }
};

struct CountGrid {
    std::vector<long> counts;   // row-major cell order
    Eigen::VectorXd areas;      // |s_i|, uniform for a regular grid
    Window window;
    std::size_t dropped = 0;    // points outside the window, reported not fatal

    long total() const;
    int n() const { return static_cast<int>(counts.size()); }
};

struct CovariateStack {
    std::vector<std::string> names;
    Eigen::MatrixXd values;          // n x p, cell-by-covariate
    std::vector<int> transform_log;  // per-covariate flag, set by preprocessing
    Eigen::VectorXd means, sds;      // recorded at standardization
    bool standardized = false;

    int n() const { return static_cast<int>(values.rows()); }
    int p() const { return static_cast<int>(values.cols()); }
    int column_of(const std::string& name) const;  // -1 if absent
};

CountGrid grid_counts(const PointPattern& pattern, const Window& window);

// Log-transforms flagged columns, then centres and scales every column to
// unit sample standard deviation (divisor n-1). Means and sds are recorded
// on the stack for back-transformation of fitted effects.
CovariateStack preprocess_covariates(const CovariateStack& raw, const std::vector<int>& log_flags);

struct VifReport {
    std::vector<std::string> kept;
    std::vector<double> vif;             // final VIF of each kept covariate
    std::vector<std::string> removed;    // in removal order
    std::vector<double> removed_vif;     // VIF at the time of removal (inf for exact collinearity)
};

// Greedy collinearity filter: repeatedly drops the covariate with the largest
// variance inflation factor until all fall below the threshold. Exactly
// collinear columns are removed first. Ties break by earlier name order.
VifReport vif_filter(const CovariateStack& stack, double threshold);

// Restrict a stack to the named columns, preserving the given order.
CovariateStack select_covariates(const CovariateStack& stack, const std::vector<std::string>& names);

// Sum counts over factor x factor blocks, producing the coarser grid.
CountGrid aggregate_counts(const CountGrid& fine, int factor);

// Block means of covariate rasters for a coarser grid.
CovariateStack aggregate_covariates(const CovariateStack& fine, const Window& fine_window, int factor);

Window coarsen(const Window& w, int factor);

}
