#include "lgcp/model.hpp"

#include <cmath>

#include "lgcp/errors.hpp"
#include "lgcp/rng.hpp"

namespace lgcp {

LatentState LatentState::zeros(int n, int p) {
    LatentState s;
    s.beta0 = 0.0;
    s.beta = Eigen::VectorXd::Zero(p);
    s.u_star = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
}

double Hyperparameters::log_tau() const { return std::log(tau); }

double Hyperparameters::logit_phi() const { return std::log(phi / (1.0 - phi)); }

Hyperparameters Hyperparameters::from_internal(double log_tau, double logit_phi) {
    Hyperparameters h;
    h.tau = std::exp(log_tau);
    h.phi = 1.0 / (1.0 + std::exp(-logit_phi));
    return h;
}

void Hyperparameters::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("tau must be positive and finite");
    if (!(phi > 0.0 && phi < 1.0)) throw InputError("phi must lie in (0,1)");
}

Eigen::VectorXd ModelSpec::exposure() const {
    if (unit_exposure) return Eigen::VectorXd::Ones(n());
    return counts.areas;
}

void ModelSpec::validate() const {
    const int nn = n();
    if (nn < 1) throw InputError("model has no cells");
    if (counts.areas.size() != nn) throw InputError("cell area vector does not match cell count");
    if ((counts.areas.array() <= 0.0).any()) throw InputError("cell areas must be positive");
    if (p() > 0 && covariates.n() != nn)
        throw InputError("covariate stack does not match the cell count");
    if (!(beta_prec > 0.0)) throw InputError("beta_prec must be positive");
    for (long c : counts.counts)
        if (c < 0) throw InputError("negative cell count");
}

Eigen::VectorXd linear_predictor(const LatentState& state, const Hyperparameters& hyper,
                                 const ModelSpec& spec) {
    const int n = spec.n();
    if (state.u_star.size() != n || state.v.size() != n || state.beta.size() != spec.p())
        throw InputError("latent state dimensions do not match the model");
    const double a = std::sqrt(hyper.phi / hyper.tau);
    const double b = std::sqrt((1.0 - hyper.phi) / hyper.tau);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, state.beta0);
    if (spec.p() > 0) eta += spec.covariates.values * state.beta;
    eta += a * state.u_star + b * state.v;
    return eta;
}

LikelihoodEval log_likelihood_core(const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& exposure, Likelihood kind,
                                   double gaussian_obs_prec) {
    const int n = static_cast<int>(eta.size());
    if (y.size() != n || exposure.size() != n)
        throw InputError("likelihood inputs have mismatched lengths");
    LikelihoodEval out;
    out.grad.resize(n);
    out.curvature.resize(n);

    if (kind == Likelihood::gaussian) {
        const double k = gaussian_obs_prec;
        const double c = 0.5 * std::log(k / (2.0 * M_PI));
        double value = 0.0;
        for (int i = 0; i < n; ++i) {
            const double r = y[i] - eta[i];
            value += -0.5 * k * r * r + c;
            out.grad[i] = k * r;
            out.curvature[i] = k;
        }
        out.value = value;
        return out;
    }

    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        if (eta[i] > 40.0)
            throw NumericalError("linear predictor exceeded 40 at cell " + std::to_string(i) +
                                 " (intensity out of plausible range)");
        const double mu = exposure[i] * std::exp(eta[i]);
        value += y[i] * (std::log(exposure[i]) + eta[i]) - mu - std::lgamma(y[i] + 1.0);
        out.grad[i] = y[i] - mu;
        out.curvature[i] = mu;
    }
    out.value = value;
    return out;
}

LikelihoodEval log_likelihood(const Eigen::VectorXd& eta, const CountGrid& counts) {
    Eigen::VectorXd y(counts.n());
    for (int i = 0; i < counts.n(); ++i) y[i] = static_cast<double>(counts.counts[static_cast<std::size_t>(i)]);
    return log_likelihood_core(eta, y, counts.areas, Likelihood::poisson, 1.0);
}

PosteriorEval log_posterior(const LatentState& state, const Hyperparameters& hyper,
                            const ModelSpec& spec) {
    hyper.validate();
    const int n = spec.n();
    const int p = spec.p();
    const double a = std::sqrt(hyper.phi / hyper.tau);
    const double b = std::sqrt((1.0 - hyper.phi) / hyper.tau);

    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = static_cast<double>(spec.counts.counts[static_cast<std::size_t>(i)]);
    const Eigen::VectorXd eta = linear_predictor(state, hyper, spec);
    const LikelihoodEval lik =
        log_likelihood_core(eta, y, spec.exposure(), spec.likelihood, spec.gaussian_obs_prec);

    PosteriorEval out;
    const double kb = spec.beta_prec;
    const double coef_const = 0.5 * std::log(kb / (2.0 * M_PI));

    // coefficient prior
    double value = lik.value;
    value += -0.5 * kb * state.beta0 * state.beta0 + coef_const;
    value += -0.5 * kb * state.beta.squaredNorm() + coef_const * p;

    // unit-precision field priors; the improper IGMRF prior on u* carries no
    // normalizing constant, which is the same for every hyper point
    const Eigen::VectorXd Ru = spec.prec.scaled * state.u_star;
    value += -0.5 * state.u_star.dot(Ru);
    value += -0.5 * state.v.squaredNorm() - 0.5 * n * std::log(2.0 * M_PI);

    // hyperpriors on the internal scale
    value += spec.prec_prior.log_density_tau(hyper.tau) + hyper.log_tau();
    value += spec.mix_prior.log_density_logit(hyper.logit_phi());

    out.value = value;
    out.grad_beta0 = lik.grad.sum() - kb * state.beta0;
    if (p > 0)
        out.grad_beta = spec.covariates.values.transpose() * lik.grad - kb * state.beta;
    else
        out.grad_beta = Eigen::VectorXd::Zero(0);
    out.grad_u = a * lik.grad - Ru;
    out.grad_v = b * lik.grad - state.v;
    return out;
}

Eigen::MatrixXd constraint_matrix(const ModelSpec& spec, const Hyperparameters& hyper) {
    const int n = spec.n();
    const int p = spec.p();
    const int dim = spec.dim();
    const int base_k = static_cast<int>(spec.prec.base.constraints.size());
    const int rsr_k = spec.rsr ? 1 + p : 0;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(base_k + rsr_k, dim);
    for (int i = 0; i < base_k; ++i)
        C.block(i, 1 + p, 1, n) = spec.prec.base.constraints[static_cast<std::size_t>(i)].transpose();
    if (spec.rsr) {
        const double sa = std::sqrt(hyper.phi);
        const double sb = std::sqrt(1.0 - hyper.phi);
        // orthogonality of the combined random component to the design span
        C.block(base_k, 1 + p, 1, n).setConstant(sa);
        C.block(base_k, 1 + p + n, 1, n).setConstant(sb);
        for (int j = 0; j < p; ++j) {
            C.block(base_k + 1 + j, 1 + p, 1, n) = sa * spec.covariates.values.col(j).transpose();
            C.block(base_k + 1 + j, 1 + p + n, 1, n) = sb * spec.covariates.values.col(j).transpose();
        }
    }
    return C;
}

void Projector::apply(LatentState& state, const ModelSpec& spec) const {
    const int n = spec.n();
    const int p = spec.p();
    Eigen::VectorXd w(spec.dim());
    w[0] = state.beta0;
    w.segment(1, p) = state.beta;
    w.segment(1 + p, n) = state.u_star;
    w.segment(1 + p + n, n) = state.v;
    const Eigen::MatrixXd S = C * C.transpose();
    const Eigen::VectorXd corr = C.transpose() * S.ldlt().solve(C * w);
    w -= corr;
    state.beta0 = w[0];
    state.beta = w.segment(1, p);
    state.u_star = w.segment(1 + p, n);
    state.v = w.segment(1 + p + n, n);
}

Projector rsr_projection(const ModelSpec& spec, const Hyperparameters& hyper) {
    if (!spec.rsr) throw InputError("rsr_projection requires the rsr flag");
    Eigen::MatrixXd design(spec.n(), 1 + spec.p());
    design.col(0).setOnes();
    for (int j = 0; j < spec.p(); ++j) design.col(1 + j) = spec.covariates.values.col(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols())
        throw InputError("rank-deficient design for restricted spatial regression");
    Projector proj;
    proj.C = constraint_matrix(spec, hyper);
    return proj;
}

SimulationResult simulate(const ModelSpec& spec, const Hyperparameters& hyper, double beta0_true,
                          const Eigen::VectorXd& beta_true, std::uint64_t seed) {
    spec.validate();
    hyper.validate();
    const int n = spec.n();
    const int p = spec.p();
    if (beta_true.size() != p) throw InputError("beta_true length does not match covariate count");

    // spectral factor of the scaled structure matrix
    Eigen::MatrixXd basis;
    Eigen::VectorXd lambda;
    if (spec.prec.basis && spec.prec.base_spectrum.size() == n) {
        basis = *spec.prec.basis;
        lambda = spec.prec.base_spectrum;
    } else {
        if (n > 6000)
            throw InputError("simulation needs a spectral basis; rescale with keep_basis or reduce the lattice");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(spec.prec.base.entries));
        if (solver.info() != Eigen::Success)
            throw NumericalError("eigendecomposition failed in simulate");
        basis = solver.eigenvectors();
        lambda = solver.eigenvalues();
    }
    const double lmax = lambda[lambda.size() - 1];
    const double tol = 1e-10 * lmax;

    Rng rng(seed);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < n; ++k) {
        if (lambda[k] < tol) continue;
        const double sd = 1.0 / std::sqrt(spec.prec.scale_factor * lambda[k]);
        u += (sd * rng.normal()) * basis.col(k);
    }
    // constraints beyond the null space: conditioning by kriging through the
    // spectral covariance
    {
        std::vector<Eigen::VectorXd> active;
        for (const auto& c : spec.prec.base.constraints) {
            double proj = 0.0;
            for (int k = 0; k < n; ++k)
                if (lambda[k] >= tol) proj += std::pow(basis.col(k).dot(c), 2);
            if (std::sqrt(proj) > 1e-8 * c.norm()) active.push_back(c);
        }
        if (!active.empty()) {
            const int kc = static_cast<int>(active.size());
            Eigen::MatrixXd C(kc, n);
            for (int i = 0; i < kc; ++i) C.row(i) = active[static_cast<std::size_t>(i)].transpose();
            Eigen::MatrixXd G(n, kc);  // Sigma C^T
            G.setZero();
            for (int k = 0; k < n; ++k) {
                if (lambda[k] < tol) continue;
                const double inv = 1.0 / (spec.prec.scale_factor * lambda[k]);
                G += inv * basis.col(k) * (C * basis.col(k)).transpose();
            }
            const Eigen::MatrixXd S = C * G;
            u -= G * Eigen::LLT<Eigen::MatrixXd>(S).solve(C * u);
        }
    }

    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();

    SimulationResult result;
    result.truth.beta0 = beta0_true;
    result.truth.beta = beta_true;
    result.truth.u_star = u;
    result.truth.v = v;

    const double a = std::sqrt(hyper.phi / hyper.tau);
    const double b = std::sqrt((1.0 - hyper.phi) / hyper.tau);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, beta0_true);
    if (p > 0) eta += spec.covariates.values * beta_true;
    eta += a * u + b * v;
    result.eta = eta;

    const Eigen::VectorXd e = spec.exposure();
    result.counts.window = spec.counts.window;
    result.counts.areas = spec.counts.areas;
    result.counts.counts.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (eta[i] > 40.0)
            throw NumericalError("simulated intensity overflow (eta > 40) at cell " + std::to_string(i));
        result.counts.counts[static_cast<std::size_t>(i)] = rng.poisson(e[i] * std::exp(eta[i]));
    }
    return result;
}

}
