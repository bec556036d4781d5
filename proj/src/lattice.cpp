#include "lgcp/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lgcp {

void Window::validate() const {
    if (!(xmax > xmin) || !(ymax > ymin))
        throw InputError("window has zero or negative extent");
    if (nrow < 1 || ncol < 1)
        throw InputError("window grid dimensions must be positive");
    if (!(cell_area() > 0.0))
        throw InputError("window has zero cell area");
}

int Window::cell_index(double x, double y) const {
    if (x < xmin || x > xmax || y < ymin || y > ymax) return -1;
    int col = static_cast<int>(std::floor((x - xmin) / dx()));
    int row = static_cast<int>(std::floor((y - ymin) / dy()));
    // x == xmax (or rounding at the far edge) lands one past the last cell
    if (col >= ncol) col = ncol - 1;
    if (row >= nrow) row = nrow - 1;
    return row * ncol + col;
}

long CountGrid::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0L);
}

int CovariateStack::column_of(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == name) return static_cast<int>(j);
    return -1;
}

CountGrid grid_counts(const PointPattern& pattern, const Window& window) {
    window.validate();
    if (pattern.x.size() != pattern.y.size())
        throw InputError("point pattern has mismatched coordinate lengths");

    CountGrid grid;
    grid.window = window;
    grid.counts.assign(static_cast<std::size_t>(window.cells()), 0L);
    grid.areas = Eigen::VectorXd::Constant(window.cells(), window.cell_area());

    for (std::size_t k = 0; k < pattern.x.size(); ++k) {
        const int idx = window.cell_index(pattern.x[k], pattern.y[k]);
        if (idx < 0) {
            ++grid.dropped;
            continue;
        }
        ++grid.counts[static_cast<std::size_t>(idx)];
    }
    return grid;
}

CovariateStack preprocess_covariates(const CovariateStack& raw, const std::vector<int>& log_flags) {
    const int n = raw.n();
    const int p = raw.p();
    if (p == 0) throw InputError("covariate stack is empty");
    if (static_cast<int>(raw.names.size()) != p)
        throw InputError("covariate stack has mismatched name count");
    if (!log_flags.empty() && static_cast<int>(log_flags.size()) != p)
        throw InputError("log-flag list length does not match covariate count");
    if (n < 2) throw InputError("need at least two cells to standardize covariates");

    CovariateStack out;
    out.names = raw.names;
    out.values = raw.values;
    out.transform_log.assign(static_cast<std::size_t>(p), 0);
    out.means = Eigen::VectorXd::Zero(p);
    out.sds = Eigen::VectorXd::Zero(p);

    for (int j = 0; j < p; ++j) {
        const bool take_log = !log_flags.empty() && log_flags[static_cast<std::size_t>(j)] != 0;
        if (take_log) {
            if ((out.values.col(j).array() <= 0.0).any())
                throw InputError("covariate '" + raw.names[static_cast<std::size_t>(j)] +
                                 "' has non-positive values and cannot be log-transformed");
            out.values.col(j) = out.values.col(j).array().log();
            out.transform_log[static_cast<std::size_t>(j)] = 1;
        }
        const double mean = out.values.col(j).mean();
        const double ss = (out.values.col(j).array() - mean).square().sum();
        const double sd = std::sqrt(ss / (n - 1));
        if (!(sd > 0.0))
            throw InputError("covariate '" + raw.names[static_cast<std::size_t>(j)] + "' is constant");
        out.values.col(j) = (out.values.col(j).array() - mean) / sd;
        out.means[j] = mean;
        out.sds[j] = sd;
    }
    out.standardized = true;
    return out;
}

namespace {

// R^2 from regressing column j on the remaining columns plus an intercept.
// Returns a negative value when the residual regression is numerically
// singular (exact collinearity).
double r_squared(const Eigen::MatrixXd& values, int j) {
    const int n = static_cast<int>(values.rows());
    const int p = static_cast<int>(values.cols());
    Eigen::MatrixXd design(n, p);  // intercept + all columns except j
    design.col(0).setOnes();
    int c = 1;
    for (int k = 0; k < p; ++k) {
        if (k == j) continue;
        design.col(c++) = values.col(k);
    }
    const Eigen::VectorXd y = values.col(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    const Eigen::VectorXd fitted = design * qr.solve(y);
    const double ybar = y.mean();
    const double sst = (y.array() - ybar).square().sum();
    if (!(sst > 0.0)) return -1.0;
    const double ssr = (y - fitted).squaredNorm();
    return 1.0 - ssr / sst;
}

}  // namespace

VifReport vif_filter(const CovariateStack& stack, double threshold) {
    if (!(threshold > 0.0)) throw InputError("VIF threshold must be positive");
    if (stack.p() < 2) throw InputError("VIF filtering needs at least two covariates");
    if (stack.n() <= stack.p())
        throw InputError("VIF filtering needs more cells than covariates");

    VifReport report;
    std::vector<int> active(static_cast<std::size_t>(stack.p()));
    std::iota(active.begin(), active.end(), 0);

    auto active_values = [&]() {
        Eigen::MatrixXd m(stack.n(), static_cast<int>(active.size()));
        for (std::size_t c = 0; c < active.size(); ++c) m.col(static_cast<int>(c)) = stack.values.col(active[c]);
        return m;
    };

    // Exact collinearity first: while the active design (with intercept) is
    // rank deficient, remove the earliest column whose removal restores rank.
    for (;;) {
        if (active.size() < 2) break;
        Eigen::MatrixXd m(stack.n(), static_cast<int>(active.size()) + 1);
        m.col(0).setOnes();
        for (std::size_t c = 0; c < active.size(); ++c) m.col(static_cast<int>(c) + 1) = stack.values.col(active[c]);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
        qr.setThreshold(1e-10);
        if (qr.rank() == m.cols()) break;
        // find the first active column that is in the span of the others
        std::size_t victim = 0;
        bool found = false;
        for (std::size_t c = 0; c < active.size() && !found; ++c) {
            const double r2 = r_squared(active_values(), static_cast<int>(c));
            if (r2 > 1.0 - 1e-10) {
                victim = c;
                found = true;
            }
        }
        if (!found) victim = 0;
        report.removed.push_back(stack.names[static_cast<std::size_t>(active[victim])]);
        report.removed_vif.push_back(std::numeric_limits<double>::infinity());
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(victim));
    }

    // Greedy removal by largest VIF.
    for (;;) {
        if (active.size() < 2) break;
        const Eigen::MatrixXd m = active_values();
        std::vector<double> vifs(active.size());
        double worst = -1.0;
        std::size_t worst_at = 0;
        for (std::size_t c = 0; c < active.size(); ++c) {
            const double r2 = r_squared(m, static_cast<int>(c));
            vifs[c] = (r2 >= 1.0) ? std::numeric_limits<double>::infinity() : 1.0 / (1.0 - r2);
            if (vifs[c] > worst + 1e-12) {  // strict improvement keeps earliest on ties
                worst = vifs[c];
                worst_at = c;
            }
        }
        if (worst < threshold) {
            for (std::size_t c = 0; c < active.size(); ++c) {
                report.kept.push_back(stack.names[static_cast<std::size_t>(active[c])]);
                report.vif.push_back(vifs[c]);
            }
            return report;
        }
        report.removed.push_back(stack.names[static_cast<std::size_t>(active[worst_at])]);
        report.removed_vif.push_back(worst);
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst_at));
    }

    // down to a single covariate: VIF is 1 by convention
    for (int idx : active) {
        report.kept.push_back(stack.names[static_cast<std::size_t>(idx)]);
        report.vif.push_back(1.0);
    }
    return report;
}

CovariateStack select_covariates(const CovariateStack& stack, const std::vector<std::string>& names) {
    CovariateStack out;
    out.values.resize(stack.n(), static_cast<int>(names.size()));
    out.means = Eigen::VectorXd::Zero(static_cast<int>(names.size()));
    out.sds = Eigen::VectorXd::Zero(static_cast<int>(names.size()));
    out.standardized = stack.standardized;
    for (std::size_t c = 0; c < names.size(); ++c) {
        const int j = stack.column_of(names[c]);
        if (j < 0) throw InputError("unknown covariate '" + names[c] + "'");
        out.names.push_back(names[c]);
        out.values.col(static_cast<int>(c)) = stack.values.col(j);
        if (!stack.transform_log.empty())
            out.transform_log.push_back(stack.transform_log[static_cast<std::size_t>(j)]);
        if (stack.means.size() == stack.p()) out.means[static_cast<int>(c)] = stack.means[j];
        if (stack.sds.size() == stack.p()) out.sds[static_cast<int>(c)] = stack.sds[j];
    }
    return out;
}

Window coarsen(const Window& w, int factor) {
    if (factor < 1) throw InputError("aggregation factor must be positive");
    if (w.nrow % factor != 0 || w.ncol % factor != 0)
        throw InputError("grid dimensions are not divisible by the aggregation factor");
    Window c = w;
    c.nrow = w.nrow / factor;
    c.ncol = w.ncol / factor;
    return c;
}

CountGrid aggregate_counts(const CountGrid& fine, int factor) {
    const Window cw = coarsen(fine.window, factor);
    CountGrid out;
    out.window = cw;
    out.counts.assign(static_cast<std::size_t>(cw.cells()), 0L);
    out.areas = Eigen::VectorXd::Constant(cw.cells(), cw.cell_area());
    out.dropped = fine.dropped;
    for (int r = 0; r < fine.window.nrow; ++r)
        for (int c = 0; c < fine.window.ncol; ++c) {
            const int coarse = (r / factor) * cw.ncol + (c / factor);
            out.counts[static_cast<std::size_t>(coarse)] +=
                fine.counts[static_cast<std::size_t>(r * fine.window.ncol + c)];
        }
    return out;
}

CovariateStack aggregate_covariates(const CovariateStack& fine, const Window& fine_window, int factor) {
    if (fine.n() != fine_window.cells())
        throw InputError("covariate stack does not match the window cell count");
    const Window cw = coarsen(fine_window, factor);
    CovariateStack out;
    out.names = fine.names;
    out.transform_log = fine.transform_log;
    out.values = Eigen::MatrixXd::Zero(cw.cells(), fine.p());
    out.means = Eigen::VectorXd::Zero(fine.p());
    out.sds = Eigen::VectorXd::Zero(fine.p());
    out.standardized = false;  // block means break exact standardization
    const double inv = 1.0 / (factor * factor);
    for (int r = 0; r < fine_window.nrow; ++r)
        for (int c = 0; c < fine_window.ncol; ++c) {
            const int coarse = (r / factor) * cw.ncol + (c / factor);
            out.values.row(coarse) += inv * fine.values.row(r * fine_window.ncol + c);
        }
    return out;
}

}
