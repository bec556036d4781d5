#include "lgcp/igmrf.hpp"

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgcp/errors.hpp"

namespace lgcp {

const char* gv_method_name(GvMethod m) {
    switch (m) {
        case GvMethod::exact: return "exact";
        case GvMethod::torus: return "torus";
        case GvMethod::auto_select: return "auto";
    }
    return "?";
}

StructureMatrix build_rw2d(int nrow, int ncol, bool trend_constraints) {
    if (nrow < 3 || ncol < 3)
        throw InputError("RW2D lattice needs nrow >= 3 and ncol >= 3");
    const int n = nrow * ncol;

    // graph Laplacian of the 4-neighbour lattice (free boundary)
    Eigen::SparseMatrix<double> D(n, n);
    {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<std::size_t>(5 * n));
        for (int r = 0; r < nrow; ++r)
            for (int c = 0; c < ncol; ++c) {
                const int i = r * ncol + c;
                int degree = 0;
                const int dr[4] = {-1, 1, 0, 0};
                const int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int rr = r + dr[k], cc = c + dc[k];
                    if (rr < 0 || rr >= nrow || cc < 0 || cc >= ncol) continue;
                    ++degree;
                    trips.emplace_back(i, rr * ncol + cc, -1.0);
                }
                trips.emplace_back(i, i, static_cast<double>(degree));
            }
        D.setFromTriplets(trips.begin(), trips.end());
    }

    StructureMatrix R;
    R.nrow = nrow;
    R.ncol = ncol;
    R.n = n;
    R.entries = (D * D).pruned(1e-14, 1.0);
    R.entries.makeCompressed();

    R.constraints.push_back(Eigen::VectorXd::Ones(n));
    if (trend_constraints) {
        Eigen::VectorXd tx(n), ty(n);
        for (int r = 0; r < nrow; ++r)
            for (int c = 0; c < ncol; ++c) {
                tx[r * ncol + c] = c - 0.5 * (ncol - 1);
                ty[r * ncol + c] = r - 0.5 * (nrow - 1);
            }
        R.constraints.push_back(tx);
        R.constraints.push_back(ty);
    }
    return R;
}

Eigen::VectorXd torus_spectrum(int nrow, int ncol) {
    if (nrow < 3 || ncol < 3)
        throw InputError("torus spectrum needs nrow >= 3 and ncol >= 3");
    Eigen::VectorXd lambda(nrow * ncol);
    for (int i = 0; i < nrow; ++i)
        for (int j = 0; j < ncol; ++j) {
            const double base = 4.0 - 2.0 * std::cos(2.0 * M_PI * i / nrow) -
                                2.0 * std::cos(2.0 * M_PI * j / ncol);
            lambda[i * ncol + j] = base * base;
        }
    return lambda;
}

Eigen::VectorXd embedded_torus_spectrum(int nrow, int ncol, int factor) {
    if (factor < 1) throw InputError("torus embedding factor must be positive");
    return torus_spectrum(nrow * factor, ncol * factor);
}

namespace {

struct DenseEig {
    Eigen::MatrixXd V;        // eigenvectors, columns ascending by eigenvalue
    Eigen::VectorXd lambda;
    double null_tol = 0.0;
    int rank_deficiency = 0;
};

DenseEig dense_eig(const StructureMatrix& R, int dense_limit) {
    if (R.n > dense_limit)
        throw InputError("lattice has " + std::to_string(R.n) +
                         " cells, above the dense limit " + std::to_string(dense_limit) +
                         " for the exact method");
    Eigen::MatrixXd dense(R.entries);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
    if (solver.info() != Eigen::Success)
        throw NumericalError("eigendecomposition of the structure matrix failed");
    DenseEig eig;
    eig.V = solver.eigenvectors();
    eig.lambda = solver.eigenvalues();
    const double lmax = eig.lambda[eig.lambda.size() - 1];
    if (!(lmax > 0.0)) throw NumericalError("structure matrix has an all-zero spectrum");
    eig.null_tol = 1e-10 * lmax;
    for (int k = 0; k < eig.lambda.size(); ++k)
        if (eig.lambda[k] < eig.null_tol) ++eig.rank_deficiency;
    return eig;
}

// Marginal variances of the constrained generalized inverse. The pseudo
// inverse already projects out the numerical null space; constraints with a
// component outside the null space contribute the conditioning correction
// Sigma - Sigma C^T (C Sigma C^T)^-1 C Sigma.
Eigen::VectorXd constrained_ginv_diag(const DenseEig& eig,
                                      const std::vector<Eigen::VectorXd>& constraints) {
    const int n = static_cast<int>(eig.V.rows());
    const int m = n - eig.rank_deficiency;
    const Eigen::MatrixXd Vnz = eig.V.rightCols(m);
    const Eigen::VectorXd inv_lambda = eig.lambda.tail(m).cwiseInverse();

    Eigen::VectorXd diag = (Vnz.array().square().matrix() * inv_lambda.asDiagonal()).rowwise().sum();

    std::vector<Eigen::VectorXd> active;
    for (const auto& c : constraints) {
        const Eigen::VectorXd proj = Vnz.transpose() * c;
        if (proj.norm() > 1e-8 * c.norm()) active.push_back(c);
    }
    if (!active.empty()) {
        const int k = static_cast<int>(active.size());
        Eigen::MatrixXd C(k, n);
        for (int i = 0; i < k; ++i) C.row(i) = active[static_cast<std::size_t>(i)].transpose();
        // G = Sigma C^T computed through the spectral form
        const Eigen::MatrixXd W = Vnz.transpose() * C.transpose();              // m x k
        const Eigen::MatrixXd G = Vnz * (inv_lambda.asDiagonal() * W);          // n x k
        const Eigen::MatrixXd S = C * G;                                        // k x k
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw NumericalError("constraint correction is singular in the generalized inverse");
        const Eigen::MatrixXd GS = llt.solve(G.transpose());                    // k x n
        diag -= (G.array() * GS.transpose().array()).rowwise().sum().matrix();
    }
    return diag;
}

double geometric_mean(const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (int i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0.0))
            throw NumericalError("non-positive marginal variance in generalized inverse (cell " +
                                 std::to_string(i) + ")");
        acc += std::log(v[i]);
    }
    return std::exp(acc / v.size());
}

GvMethod resolve(GvMethod method, int n, int dense_limit) {
    if (method == GvMethod::auto_select)
        return n <= dense_limit ? GvMethod::exact : GvMethod::torus;
    return method;
}

}  // namespace

GvResult generalized_variance(const StructureMatrix& R, GvMethod method, int dense_limit) {
    GvResult result;
    result.method_used = resolve(method, R.n, dense_limit);
    if (result.method_used == GvMethod::exact) {
        const DenseEig eig = dense_eig(R, dense_limit);
        result.ginv_diag = constrained_ginv_diag(eig, R.constraints);
        result.rank_deficiency = eig.rank_deficiency;
        result.gv = geometric_mean(result.ginv_diag);
        return result;
    }
    // torus: every cell has the same marginal variance, the average of 1/lambda
    // over the nonzero modes of the factor-2 embedded torus
    const Eigen::VectorXd lambda = embedded_torus_spectrum(R.nrow, R.ncol, 2);
    const double lmax = lambda.maxCoeff();
    if (!(lmax > 0.0)) throw NumericalError("torus spectrum is all zero");
    double acc = 0.0;
    int zeros = 0;
    for (int k = 0; k < lambda.size(); ++k) {
        if (lambda[k] < 1e-10 * lmax) {
            ++zeros;
            continue;
        }
        acc += 1.0 / lambda[k];
    }
    if (zeros != 1)
        throw NumericalError("torus spectrum should have exactly one zero mode, found " +
                             std::to_string(zeros));
    result.gv = acc / lambda.size();
    result.ginv_diag = Eigen::VectorXd::Constant(R.n, result.gv);
    result.rank_deficiency = 1;
    return result;
}

ScaledPrecision scale_to_unit_gv(const StructureMatrix& R, GvMethod method, int dense_limit,
                                 bool keep_basis) {
    ScaledPrecision prec;
    prec.base = R;
    prec.method = resolve(method, R.n, dense_limit);
    prec.torus_spectrum = torus_spectrum(R.nrow, R.ncol);

    if (prec.method == GvMethod::exact) {
        const DenseEig eig = dense_eig(R, dense_limit);
        const Eigen::VectorXd diag = constrained_ginv_diag(eig, R.constraints);
        prec.base.rank_deficiency = eig.rank_deficiency;
        prec.gv_before = geometric_mean(diag);
        prec.scale_factor = prec.gv_before;
        prec.ginv_diag = diag / prec.scale_factor;
        prec.base_spectrum = eig.lambda;
        if (keep_basis) prec.basis = std::make_shared<Eigen::MatrixXd>(eig.V);
    } else {
        const GvResult gv = generalized_variance(R, GvMethod::torus, dense_limit);
        prec.base.rank_deficiency = gv.rank_deficiency;
        prec.gv_before = gv.gv;
        prec.scale_factor = gv.gv;
        prec.ginv_diag = gv.ginv_diag / prec.scale_factor;
    }
    prec.scaled = prec.scale_factor * R.entries;

    const double gv_after = geometric_mean(prec.ginv_diag);
    if (std::abs(gv_after - 1.0) > 1e-8)
        throw NumericalError("scaling failed to reach unit generalized variance (got " +
                             std::to_string(gv_after) + ")");
    return prec;
}

std::string scale_diagnostic_json(const ScaledPrecision& prec) {
    nlohmann::json j;
    j["nrow"] = prec.base.nrow;
    j["ncol"] = prec.base.ncol;
    j["n"] = prec.base.n;
    j["scale_factor"] = prec.scale_factor;
    j["gv_before"] = prec.gv_before;
    j["rank_deficiency"] = prec.base.rank_deficiency;
    j["method"] = gv_method_name(prec.method);
    return j.dump(2);
}

}
