#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>
#include <string>
#include <vector>

namespace lgcp {

// Precision structure R of the second-order intrinsic GMRF on a lattice,
// with the linear constraints imposed on the field.
struct StructureMatrix {
    int nrow = 0, ncol = 0, n = 0;
    Eigen::SparseMatrix<double> entries;
    // computed during the exact generalized-inverse pass; -1 until then
    int rank_deficiency = -1;
    std::vector<Eigen::VectorXd> constraints;
};

enum class GvMethod { exact, torus, auto_select };

const char* gv_method_name(GvMethod m);

// R = D^T D where D is the 5-point discrete Laplacian with free boundary.
// The interior rows carry the 13-point biharmonic stencil (20, -8, 2, 1);
// boundary rows follow from the product, no ad-hoc edits. The default
// constraint is sum-to-zero; trend_constraints adds the two linear
// coordinate trends.
StructureMatrix build_rw2d(int nrow, int ncol, bool trend_constraints = false);

struct GvResult {
    double gv = 0.0;
    Eigen::VectorXd ginv_diag;
    int rank_deficiency = 0;
    GvMethod method_used = GvMethod::exact;
};

// Marginal variances of the constrained generalized inverse of R and their
// geometric mean. `exact` runs a dense eigendecomposition (eigenvalues below
// 1e-10 * lambda_max treated as null) and applies the constraint correction;
// `torus` uses the closed-form spectrum of the lattice embedded on a torus of
// twice the dimensions, under which all marginal variances are equal.
GvResult generalized_variance(const StructureMatrix& R, GvMethod method, int dense_limit = 6000);

struct ScaledPrecision {
    StructureMatrix base;
    double scale_factor = 1.0;         // c with R* = c R
    double gv_before = 1.0;
    Eigen::SparseMatrix<double> scaled;
    Eigen::VectorXd ginv_diag;         // marginal variances under R*
    Eigen::VectorXd torus_spectrum;    // same-size torus eigenvalues, length n
    GvMethod method = GvMethod::exact;
    // exact method only: eigenvalues of the unscaled R (ascending) and,
    // when requested, the matching eigenvector basis for spectral sampling
    Eigen::VectorXd base_spectrum;
    std::shared_ptr<Eigen::MatrixXd> basis;

    int n() const { return base.n; }
};

ScaledPrecision scale_to_unit_gv(const StructureMatrix& R, GvMethod method = GvMethod::auto_select,
                                 int dense_limit = 6000, bool keep_basis = false);

// Closed-form eigenvalues of the RW2D operator on the nrow x ncol torus:
// lambda(i,j) = (4 - 2cos(2 pi i/nrow) - 2cos(2 pi j/ncol))^2.
Eigen::VectorXd torus_spectrum(int nrow, int ncol);

// Spectrum of the model embedded on a torus enlarged by `factor` along both
// axes; the factor-2 embedding is what the torus-method variance and
// distance computations use.
Eigen::VectorXd embedded_torus_spectrum(int nrow, int ncol, int factor = 2);

// JSON diagnostic dump: nrow, ncol, scale_factor, gv_before, rank_deficiency.
std::string scale_diagnostic_json(const ScaledPrecision& prec);

}
