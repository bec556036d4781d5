#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lgcp/igmrf.hpp"

namespace lgcp {

// Penalised-complexity prior for the marginal precision tau, equivalently an
// exponential law with rate lambda on the standard deviation sigma = tau^-1/2.
// On tau itself this is the type-2 Gumbel density
//   pi(tau) = (lambda/2) tau^-3/2 exp(-lambda/sqrt(tau)).
struct PcPrecPrior {
    double U_sigma = 1.0;
    double alpha_sigma = 0.01;
    double lambda = 0.0;

    double density_tau(double tau) const;
    double log_density_tau(double tau) const;
    double density_sigma(double sigma) const;
    double cdf_sigma(double sigma) const;        // P(sigma <= s)
    double quantile_sigma(double prob) const;
};

PcPrecPrior pc_prec_prior(double U_sigma, double alpha_sigma);

// P(sigma > u) under the prior; the quadrature identity over tau is covered
// by the tests.
double prec_prior_mass_above(const PcPrecPrior& prior, double u);

// E[sigma]/U_sigma = 1/(lambda U) = 1/(-ln alpha). The literature sometimes
// quotes roughly 0.31*U for this quantity; the exponential mean gives 0.217*U
// at alpha = 0.01, and reports surface both numbers.
double expected_sigma_fraction(const PcPrecPrior& prior);
inline constexpr double sigma_fraction_heuristic = 0.31;

// Distance from the base model (phi = 0) to the mixed model at phi:
//   d(phi)^2 = sum_k [ phi (gamma_k - 1) - ln(phi gamma_k + 1 - phi) ]
// over the nonzero modes. `exact` takes gamma_k from the constrained
// generalized inverse of the scaled structure matrix; `torus` takes them from
// the factor-2 embedded torus spectrum, rescaled to mean 1, with the sum
// weighted down to the model's cell count.
double phi_distance(double phi, const ScaledPrecision& prec, GvMethod method);

// PC prior for the mixing parameter phi: exponential with rate theta on
// d(phi), truncated to [0, d(1)], calibrated so P(phi < U_phi) = alpha_phi,
// tabulated on the logit scale.
struct PcMixPrior {
    double U_phi = 0.5;
    double alpha_phi = 2.0 / 3.0;
    double theta = 0.0;
    GvMethod method = GvMethod::torus;
    std::vector<double> phi_knots, d_knots;          // monotone d table
    std::vector<double> logit_knots, logit_density;  // normalized density on logit(phi)
    double d_one = 0.0;                              // d(1)

    double log_density_logit(double t) const;
    double density_logit(double t) const;
    double cdf_phi(double phi) const;   // from the table, partial intervals interpolated
    double table_mass() const;          // trapezoid mass of the table (should be 1)
};

PcMixPrior pc_mix_prior(double U_phi, double alpha_phi, const ScaledPrecision& prec,
                        int grid_size = 512, GvMethod method = GvMethod::torus);

struct DistanceMeasure {
    double kld = 0.0;
    double d = 0.0;  // sqrt(2 kld)
};

// Zero-mean Gaussian KLD(f1 || f0) for covariances restricted to a common
// full-rank subspace.
DistanceMeasure kld_gaussian(const Eigen::MatrixXd& cov1, const Eigen::MatrixXd& cov0);

}
