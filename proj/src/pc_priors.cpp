#include "lgcp/pc_priors.hpp"

#include <algorithm>
#include <cmath>

#include "lgcp/errors.hpp"

namespace lgcp {

double PcPrecPrior::density_tau(double tau) const {
    if (!(tau > 0.0)) return 0.0;
    return 0.5 * lambda * std::pow(tau, -1.5) * std::exp(-lambda / std::sqrt(tau));
}

double PcPrecPrior::log_density_tau(double tau) const {
    if (!(tau > 0.0)) throw InputError("tau must be positive");
    return std::log(0.5 * lambda) - 1.5 * std::log(tau) - lambda / std::sqrt(tau);
}

double PcPrecPrior::density_sigma(double sigma) const {
    if (sigma < 0.0) return 0.0;
    return lambda * std::exp(-lambda * sigma);
}

double PcPrecPrior::cdf_sigma(double sigma) const {
    if (sigma <= 0.0) return 0.0;
    return -std::expm1(-lambda * sigma);
}

double PcPrecPrior::quantile_sigma(double prob) const {
    if (!(prob >= 0.0 && prob < 1.0)) throw InputError("probability out of range");
    return -std::log1p(-prob) / lambda;
}

PcPrecPrior pc_prec_prior(double U_sigma, double alpha_sigma) {
    if (!(U_sigma > 0.0)) throw InputError("U_sigma must be positive");
    if (!(alpha_sigma > 0.0 && alpha_sigma < 1.0))
        throw InputError("alpha_sigma must lie in (0,1)");
    PcPrecPrior prior;
    prior.U_sigma = U_sigma;
    prior.alpha_sigma = alpha_sigma;
    prior.lambda = -std::log(alpha_sigma) / U_sigma;
    return prior;
}

double prec_prior_mass_above(const PcPrecPrior& prior, double u) {
    if (!(u > 0.0)) throw InputError("threshold must be positive");
    return std::exp(-prior.lambda * u);
}

double expected_sigma_fraction(const PcPrecPrior& prior) {
    return 1.0 / (prior.lambda * prior.U_sigma);
}

namespace {

double distance_from_gammas(double phi, const Eigen::VectorXd& gammas, double weight) {
    double sum = 0.0;
    for (int k = 0; k < gammas.size(); ++k) {
        const double g = gammas[k];
        sum += phi * (g - 1.0) - std::log(phi * g + 1.0 - phi);
    }
    sum *= weight;
    if (sum < 0.0) {
        if (sum < -1e-10)
            throw NumericalError("negative squared distance in phi_distance: " + std::to_string(sum));
        sum = 0.0;
    }
    return std::sqrt(sum);
}

// Eigenvalues of the constrained generalized inverse of the scaled structure
// matrix. With only null-space constraints these are 1/(c lambda_k) over the
// nonzero base eigenvalues; constraints outside the null space require the
// corrected covariance, which needs the retained eigenvector basis.
Eigen::VectorXd exact_gammas(const ScaledPrecision& prec) {
    if (prec.base_spectrum.size() == 0)
        throw InputError("exact phi_distance needs a precision scaled with the exact method");
    const double lmax = prec.base_spectrum[prec.base_spectrum.size() - 1];
    const double tol = 1e-10 * lmax;

    bool extra_constraints = false;
    if (prec.basis) {
        const int nd = prec.base.rank_deficiency;
        const Eigen::MatrixXd Vnz = prec.basis->rightCols(prec.base.n - nd);
        for (const auto& c : prec.base.constraints)
            if ((Vnz.transpose() * c).norm() > 1e-8 * c.norm()) extra_constraints = true;
    } else if (prec.base.constraints.size() > 1) {
        // without the basis we cannot tell whether the extra constraints leave
        // the null space; be conservative
        throw NumericalError(
            "exact phi_distance with additional constraints needs the retained basis "
            "(scale_to_unit_gv keep_basis)");
    }

    if (!extra_constraints) {
        std::vector<double> g;
        for (int k = 0; k < prec.base_spectrum.size(); ++k) {
            const double l = prec.base_spectrum[k];
            if (l < tol) continue;
            g.push_back(1.0 / (prec.scale_factor * l));
        }
        Eigen::VectorXd out(static_cast<int>(g.size()));
        for (std::size_t k = 0; k < g.size(); ++k) out[static_cast<int>(k)] = g[k];
        return out;
    }

    // corrected covariance, dense
    const int n = prec.base.n;
    const int m = n - prec.base.rank_deficiency;
    const Eigen::MatrixXd Vnz = prec.basis->rightCols(m);
    const Eigen::VectorXd inv_l =
        (prec.scale_factor * prec.base_spectrum.tail(m)).cwiseInverse();
    Eigen::MatrixXd sigma = Vnz * inv_l.asDiagonal() * Vnz.transpose();
    std::vector<Eigen::VectorXd> active;
    for (const auto& c : prec.base.constraints)
        if ((Vnz.transpose() * c).norm() > 1e-8 * c.norm()) active.push_back(c);
    if (!active.empty()) {
        Eigen::MatrixXd C(static_cast<int>(active.size()), n);
        for (std::size_t i = 0; i < active.size(); ++i) C.row(static_cast<int>(i)) = active[i].transpose();
        const Eigen::MatrixXd G = sigma * C.transpose();
        const Eigen::MatrixXd S = C * G;
        sigma -= G * Eigen::LLT<Eigen::MatrixXd>(S).solve(G.transpose());
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sigma);
    const Eigen::VectorXd ev = solver.eigenvalues();
    const double emax = ev[ev.size() - 1];
    std::vector<double> g;
    for (int k = 0; k < ev.size(); ++k)
        if (ev[k] > 1e-10 * emax) g.push_back(ev[k]);
    Eigen::VectorXd out(static_cast<int>(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) out[static_cast<int>(k)] = g[k];
    return out;
}

}  // namespace

double phi_distance(double phi, const ScaledPrecision& prec, GvMethod method) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw InputError("phi must lie in [0,1]");
    if (phi == 0.0) return 0.0;
    if (method == GvMethod::auto_select)
        method = prec.base_spectrum.size() > 0 ? GvMethod::exact : GvMethod::torus;

    if (method == GvMethod::exact) {
        const Eigen::VectorXd gammas = exact_gammas(prec);
        return distance_from_gammas(phi, gammas, 1.0);
    }

    // torus: factor-2 embedded spectrum, gammas rescaled to unit mean, sum
    // weighted down from the torus mode count to the model cell count
    const Eigen::VectorXd lambda = embedded_torus_spectrum(prec.base.nrow, prec.base.ncol, 2);
    const int nt = static_cast<int>(lambda.size());
    const double lmax = lambda.maxCoeff();
    std::vector<double> inv;
    inv.reserve(static_cast<std::size_t>(nt));
    double acc = 0.0;
    for (int k = 0; k < nt; ++k) {
        if (lambda[k] < 1e-10 * lmax) continue;
        inv.push_back(1.0 / lambda[k]);
        acc += inv.back();
    }
    const double mean = acc / nt;
    Eigen::VectorXd gammas(static_cast<int>(inv.size()));
    for (std::size_t k = 0; k < inv.size(); ++k) gammas[static_cast<int>(k)] = inv[k] / mean;
    const double weight = static_cast<double>(prec.base.n) / nt;
    return distance_from_gammas(phi, gammas, weight);
}

double PcMixPrior::density_logit(double t) const {
    return std::exp(log_density_logit(t));
}

double PcMixPrior::log_density_logit(double t) const {
    const std::size_t m = logit_knots.size();
    if (m < 2) throw NumericalError("phi prior table is empty");
    const double t0 = logit_knots.front(), t1 = logit_knots.back();
    if (t <= t0) {
        const double slope = (std::log(logit_density[1]) - std::log(logit_density[0])) /
                             (logit_knots[1] - logit_knots[0]);
        return std::log(logit_density[0]) + slope * (t - t0);
    }
    if (t >= t1) {
        const double slope = (std::log(logit_density[m - 1]) - std::log(logit_density[m - 2])) /
                             (logit_knots[m - 1] - logit_knots[m - 2]);
        return std::log(logit_density[m - 1]) + slope * (t - t1);
    }
    const double step = (t1 - t0) / (m - 1);
    const std::size_t i = std::min(static_cast<std::size_t>((t - t0) / step), m - 2);
    const double w = (t - logit_knots[i]) / (logit_knots[i + 1] - logit_knots[i]);
    const double dens = (1.0 - w) * logit_density[i] + w * logit_density[i + 1];
    return std::log(dens);
}

double PcMixPrior::cdf_phi(double phi) const {
    if (phi <= 0.0) return 0.0;
    if (phi >= 1.0) return 1.0;
    const double t = std::log(phi / (1.0 - phi));
    const std::size_t m = logit_knots.size();
    if (t <= logit_knots.front()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const double a = logit_knots[i], b = logit_knots[i + 1];
        if (t >= b) {
            acc += 0.5 * (logit_density[i] + logit_density[i + 1]) * (b - a);
            continue;
        }
        // partial final interval with the density interpolated at t
        const double w = (t - a) / (b - a);
        const double dens_t = (1.0 - w) * logit_density[i] + w * logit_density[i + 1];
        acc += 0.5 * (logit_density[i] + dens_t) * (t - a);
        break;
    }
    return std::min(acc, 1.0);
}

double PcMixPrior::table_mass() const {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < logit_knots.size(); ++i)
        acc += 0.5 * (logit_density[i] + logit_density[i + 1]) *
               (logit_knots[i + 1] - logit_knots[i]);
    return acc;
}

PcMixPrior pc_mix_prior(double U_phi, double alpha_phi, const ScaledPrecision& prec,
                        int grid_size, GvMethod method) {
    if (!(U_phi > 0.0 && U_phi < 1.0)) throw InputError("U_phi must lie in (0,1)");
    if (!(alpha_phi > 0.0 && alpha_phi < 1.0)) throw InputError("alpha_phi must lie in (0,1)");
    if (grid_size < 64) throw InputError("phi prior grid size must be at least 64");
    if (method == GvMethod::auto_select)
        method = prec.base_spectrum.size() > 0 ? GvMethod::exact : GvMethod::torus;

    PcMixPrior prior;
    prior.U_phi = U_phi;
    prior.alpha_phi = alpha_phi;
    prior.method = method;

    const double d_one = phi_distance(1.0, prec, method);
    const double d_U = phi_distance(U_phi, prec, method);
    prior.d_one = d_one;
    if (!(d_one > 0.0)) throw NumericalError("d(1) is not positive");
    const double min_alpha = d_U / d_one;
    if (!(alpha_phi > min_alpha))
        throw InputError("infeasible phi prior: alpha_phi must exceed d(U_phi)/d(1) = " +
                         std::to_string(min_alpha));

    // P(phi < U) = (1 - e^{-theta d(U)}) / (1 - e^{-theta d(1)}), increasing
    // in theta from d(U)/d(1) toward 1
    auto mass_below = [&](double theta) {
        return std::expm1(-theta * d_U) / std::expm1(-theta * d_one);
    };
    double lo = 1e-12, hi = 1.0;
    int guard = 0;
    while (mass_below(hi) < alpha_phi) {
        hi *= 2.0;
        if (++guard > 60) throw NumericalError("phi prior rate search failed to bracket");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mass_below(mid) < alpha_phi)
            lo = mid;
        else
            hi = mid;
    }
    prior.theta = 0.5 * (lo + hi);

    // logit-space table
    const double t_lo = -16.0, t_hi = 16.0;
    prior.logit_knots.resize(static_cast<std::size_t>(grid_size));
    prior.phi_knots.resize(static_cast<std::size_t>(grid_size));
    prior.d_knots.resize(static_cast<std::size_t>(grid_size));
    for (int i = 0; i < grid_size; ++i) {
        const double t = t_lo + (t_hi - t_lo) * i / (grid_size - 1);
        const double phi = 1.0 / (1.0 + std::exp(-t));
        prior.logit_knots[static_cast<std::size_t>(i)] = t;
        prior.phi_knots[static_cast<std::size_t>(i)] = phi;
        prior.d_knots[static_cast<std::size_t>(i)] = phi_distance(phi, prec, method);
    }
    for (std::size_t i = 0; i + 1 < prior.d_knots.size(); ++i)
        if (!(prior.d_knots[i + 1] > prior.d_knots[i]))
            throw NumericalError("phi distance table is not strictly increasing");

    const double trunc = -std::expm1(-prior.theta * d_one);
    prior.logit_density.resize(static_cast<std::size_t>(grid_size));
    for (int i = 0; i < grid_size; ++i) {
        const std::size_t s = static_cast<std::size_t>(i);
        // centred finite difference of d on the (non-uniform) phi grid
        double dd;
        if (i == 0)
            dd = (prior.d_knots[1] - prior.d_knots[0]) / (prior.phi_knots[1] - prior.phi_knots[0]);
        else if (i == grid_size - 1)
            dd = (prior.d_knots[s] - prior.d_knots[s - 1]) /
                 (prior.phi_knots[s] - prior.phi_knots[s - 1]);
        else
            dd = (prior.d_knots[s + 1] - prior.d_knots[s - 1]) /
                 (prior.phi_knots[s + 1] - prior.phi_knots[s - 1]);
        const double phi = prior.phi_knots[s];
        const double jac = phi * (1.0 - phi);  // dphi/dlogit
        prior.logit_density[s] =
            prior.theta * std::exp(-prior.theta * prior.d_knots[s]) / trunc * std::abs(dd) * jac;
    }

    const double mass = prior.table_mass();
    if (!(mass > 0.0)) throw NumericalError("phi prior table has zero mass");
    for (auto& v : prior.logit_density) v /= mass;
    return prior;
}

DistanceMeasure kld_gaussian(const Eigen::MatrixXd& cov1, const Eigen::MatrixXd& cov0) {
    if (cov1.rows() != cov1.cols() || cov0.rows() != cov0.cols() || cov1.rows() != cov0.rows())
        throw InputError("covariance support mismatch in kld_gaussian");
    const int m = static_cast<int>(cov1.rows());
    Eigen::LLT<Eigen::MatrixXd> llt0(cov0);
    if (llt0.info() != Eigen::Success)
        throw InputError("base covariance is not positive definite on the common support");
    Eigen::LLT<Eigen::MatrixXd> llt1(cov1);
    if (llt1.info() != Eigen::Success)
        throw InputError("flexible covariance is not positive definite on the common support");

    const double tr = llt0.solve(cov1).trace();
    double logdet0 = 0.0, logdet1 = 0.0;
    for (int i = 0; i < m; ++i) {
        logdet0 += 2.0 * std::log(llt0.matrixL()(i, i));
        logdet1 += 2.0 * std::log(llt1.matrixL()(i, i));
    }
    DistanceMeasure out;
    out.kld = 0.5 * (tr - m + logdet0 - logdet1);
    if (out.kld < 0.0 && out.kld > -1e-10) out.kld = 0.0;
    if (out.kld < 0.0) throw NumericalError("negative KLD: " + std::to_string(out.kld));
    out.d = std::sqrt(2.0 * out.kld);
    return out;
}

}
