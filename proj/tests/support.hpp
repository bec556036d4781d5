#pragma once

// Shared fixtures for the test binaries: tiny model builders, an independent
// dense construction of the RW2D structure matrix, and quadrature helpers.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "lgcp/igmrf.hpp"
#include "lgcp/inference.hpp"
#include "lgcp/lattice.hpp"
#include "lgcp/model.hpp"
#include "lgcp/pc_priors.hpp"
#include "lgcp/rng.hpp"

namespace testsup {

// Dense R = L^2 with L the free-boundary 5-point graph Laplacian, built by
// neighbour enumeration rather than the library's sparse assembly.
inline Eigen::MatrixXd dense_rw2d(int nrow, int ncol) {
    const int n = nrow * ncol;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    auto idx = [&](int r, int c) { return r * ncol + c; };
    for (int r = 0; r < nrow; ++r) {
        for (int c = 0; c < ncol; ++c) {
            const int i = idx(r, c);
            int deg = 0;
            const int dr[] = {-1, 1, 0, 0};
            const int dc[] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int rr = r + dr[k], cc = c + dc[k];
                if (rr < 0 || rr >= nrow || cc < 0 || cc >= ncol) continue;
                L(i, idx(rr, cc)) = -1.0;
                ++deg;
            }
            L(i, i) = static_cast<double>(deg);
        }
    }
    return L * L;
}

// Spectrum of the dense structure matrix with null modes separated off.
struct DenseSpectrum {
    Eigen::VectorXd lambda;   // nonzero eigenvalues, ascending
    Eigen::MatrixXd vectors;  // matching eigenvectors
    int null_dim = 0;
};

inline DenseSpectrum dense_spectrum(const Eigen::MatrixXd& R) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(R);
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double tol = 1e-10 * ev(ev.size() - 1);
    DenseSpectrum out;
    int first = 0;
    while (first < ev.size() && ev(first) <= tol) ++first;
    out.null_dim = first;
    out.lambda = ev.tail(ev.size() - first);
    out.vectors = eig.eigenvectors().rightCols(ev.size() - first);
    return out;
}

// Marginal variances of the sum-to-zero constrained generalized inverse,
// straight from the spectral form: the null space of free-boundary RW2D is
// the constant vector, so constraining it away leaves sum_k v_ik^2 / lambda_k.
inline Eigen::VectorXd dense_ginv_diag(const Eigen::MatrixXd& R) {
    const DenseSpectrum s = dense_spectrum(R);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(R.rows());
    for (int k = 0; k < s.lambda.size(); ++k)
        diag += s.vectors.col(k).cwiseAbs2() / s.lambda(k);
    return diag;
}

inline double geometric_mean(const Eigen::VectorXd& v) {
    return std::exp(v.array().log().mean());
}

// Composite Simpson rule with an even number of panels.
template <typename F>
double simpson(F f, double a, double b, int panels) {
    if (panels % 2 != 0) ++panels;
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int i = 1; i < panels; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Numerical check of the precision prior on the log-tau scale: returns the
// total mass and the mass with sigma > u, integrating pi(tau) dtau with
// tau = e^t. Bounds cover sigma in [1e-10, 1e10] which leaves less than
// 1e-8 of mass outside for every calibration the tests use.
inline std::pair<double, double> tau_prior_quadrature(const lgcp::PcPrecPrior& prior, double u) {
    auto g = [&](double t) {
        const double tau = std::exp(t);
        return prior.density_tau(tau) * tau;
    };
    const double t_lo = -46.0, t_hi = 46.0;
    const double t_cut = -2.0 * std::log(u);  // sigma > u  <=>  tau < u^-2
    const double above = simpson(g, t_lo, t_cut, 40000);
    const double below = simpson(g, t_cut, t_hi, 40000);
    return {above + below, above};
}

// Zero-count model on the unit square, areas uniform.
inline lgcp::ModelSpec make_spec(int nrow, int ncol, int p, std::uint64_t seed,
                                 double u_sigma = 1.0, double alpha_sigma = 0.01,
                                 bool keep_basis = false,
                                 lgcp::GvMethod gv = lgcp::GvMethod::exact) {
    lgcp::ModelSpec spec;
    lgcp::Window w;
    w.xmin = 0.0;
    w.xmax = 1.0;
    w.ymin = 0.0;
    w.ymax = 1.0;
    w.nrow = nrow;
    w.ncol = ncol;
    w.validate();
    spec.counts.window = w;
    spec.counts.counts.assign(static_cast<std::size_t>(w.cells()), 0);
    spec.counts.areas = Eigen::VectorXd::Constant(w.cells(), w.cell_area());
    if (p > 0) {
        lgcp::Rng rng(seed);
        lgcp::CovariateStack raw;
        raw.values.resize(w.cells(), p);
        for (int j = 0; j < p; ++j) {
            raw.names.push_back("z" + std::to_string(j + 1));
            for (int i = 0; i < w.cells(); ++i) raw.values(i, j) = rng.normal();
        }
        spec.covariates = lgcp::preprocess_covariates(raw, std::vector<int>(p, 0));
    }
    const lgcp::StructureMatrix R = lgcp::build_rw2d(nrow, ncol);
    spec.prec = lgcp::scale_to_unit_gv(R, gv, 6000, keep_basis);
    spec.prec_prior = lgcp::pc_prec_prior(u_sigma, alpha_sigma);
    const lgcp::GvMethod mix = spec.prec.base_spectrum.size() > 0 ? lgcp::GvMethod::exact
                                                                  : lgcp::GvMethod::torus;
    spec.mix_prior = lgcp::pc_mix_prior(0.5, 2.0 / 3.0, spec.prec, 256, mix);
    return spec;
}

// Smooth deterministic covariate surface, standardized; used where the tests
// need a low-frequency regressor that can be confounded with the field.
inline void add_smooth_covariate(lgcp::ModelSpec& spec, double freq = 1.0) {
    const lgcp::Window& w = spec.counts.window;
    lgcp::CovariateStack raw;
    const int extra = spec.covariates.p();
    raw.values.resize(w.cells(), extra + 1);
    raw.names = spec.covariates.names;
    raw.names.push_back("smooth" + std::to_string(extra + 1));
    for (int r = 0; r < w.nrow; ++r) {
        for (int c = 0; c < w.ncol; ++c) {
            const int i = r * w.ncol + c;
            for (int j = 0; j < extra; ++j)
                raw.values(i, j) = spec.covariates.values(i, j);
            const double x = (c + 0.5) / w.ncol, y = (r + 0.5) / w.nrow;
            raw.values(i, extra) = std::sin(2.0 * M_PI * freq * x) + std::cos(2.0 * M_PI * freq * y);
        }
    }
    spec.covariates = lgcp::preprocess_covariates(raw, std::vector<int>(extra + 1, 0));
}

inline Eigen::VectorXd pack_state(const lgcp::LatentState& s) {
    const int p = static_cast<int>(s.beta.size());
    const int n = static_cast<int>(s.u_star.size());
    Eigen::VectorXd w(1 + p + 2 * n);
    w(0) = s.beta0;
    w.segment(1, p) = s.beta;
    w.segment(1 + p, n) = s.u_star;
    w.tail(n) = s.v;
    return w;
}

inline lgcp::LatentState unpack_state(const Eigen::VectorXd& w, int n, int p) {
    lgcp::LatentState s;
    s.beta0 = w(0);
    s.beta = w.segment(1, p);
    s.u_star = w.segment(1 + p, n);
    s.v = w.tail(n);
    return s;
}

inline Eigen::VectorXd pack_grad(const lgcp::PosteriorEval& e, int n, int p) {
    Eigen::VectorXd g(1 + p + 2 * n);
    g(0) = e.grad_beta0;
    g.segment(1, p) = e.grad_beta;
    g.segment(1 + p, n) = e.grad_u;
    g.tail(n) = e.grad_v;
    return g;
}

// Largest relative mismatch between the analytic gradient and a central
// difference, over every latent coordinate.
inline double posterior_grad_fd_error(const lgcp::ModelSpec& spec, const lgcp::LatentState& state,
                                      const lgcp::Hyperparameters& hyper, double h = 1e-5) {
    const int n = spec.n(), p = spec.p();
    const Eigen::VectorXd w0 = pack_state(state);
    const Eigen::VectorXd g = pack_grad(lgcp::log_posterior(state, hyper, spec), n, p);
    double worst = 0.0;
    for (int i = 0; i < w0.size(); ++i) {
        Eigen::VectorXd wp = w0, wm = w0;
        wp(i) += h;
        wm(i) -= h;
        const double fp = lgcp::log_posterior(unpack_state(wp, n, p), hyper, spec).value;
        const double fm = lgcp::log_posterior(unpack_state(wm, n, p), hyper, spec).value;
        const double fd = (fp - fm) / (2.0 * h);
        const double scale = std::max({1.0, std::abs(fd), std::abs(g(i))});
        worst = std::max(worst, std::abs(fd - g(i)) / scale);
    }
    return worst;
}

inline const lgcp::MarginalSummary& coef_marginal(const lgcp::FitResult& fit,
                                                  std::size_t index) {
    return fit.beta_marginals.at(index);
}

}
