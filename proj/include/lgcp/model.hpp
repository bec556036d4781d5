#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "lgcp/igmrf.hpp"
#include "lgcp/lattice.hpp"
#include "lgcp/pc_priors.hpp"

namespace lgcp {

struct LatentState {
    double beta0 = 0.0;
    Eigen::VectorXd beta;    // length p
    Eigen::VectorXd u_star;  // length n, scaled structured field
    Eigen::VectorXd v;       // length n, unstructured field

    static LatentState zeros(int n, int p);
};

struct Hyperparameters {
    double tau = 1.0;
    double phi = 0.5;

    double log_tau() const;
    double logit_phi() const;
    static Hyperparameters from_internal(double log_tau, double logit_phi);
    void validate() const;
};

enum class Likelihood { poisson, gaussian };

struct ModelSpec {
    CountGrid counts;
    CovariateStack covariates;   // p may be 0
    ScaledPrecision prec;
    PcPrecPrior prec_prior;
    PcMixPrior mix_prior;
    double beta_prec = 1e-3;     // Gaussian prior precision on intercept and slopes
    bool rsr = false;            // restricted spatial regression mode
    bool unit_exposure = false;  // use exposure 1 instead of the cell areas
    // quadratic observation model used by the evidence cross-checks; the
    // point process itself is always poisson
    Likelihood likelihood = Likelihood::poisson;
    double gaussian_obs_prec = 1.0;

    int n() const { return counts.n(); }
    int p() const { return covariates.p(); }
    int dim() const { return 1 + p() + 2 * n(); }  // (beta0, beta, u*, v)
    Eigen::VectorXd exposure() const;
    void validate() const;
};

Eigen::VectorXd linear_predictor(const LatentState& state, const Hyperparameters& hyper,
                                 const ModelSpec& spec);

struct LikelihoodEval {
    double value = 0.0;
    Eigen::VectorXd grad;       // d/d eta_i
    Eigen::VectorXd curvature;  // -d2/d eta_i^2, nonnegative
};

LikelihoodEval log_likelihood(const Eigen::VectorXd& eta, const CountGrid& counts);
LikelihoodEval log_likelihood_core(const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& exposure, Likelihood kind,
                                   double gaussian_obs_prec);

struct PosteriorEval {
    double value = 0.0;
    double grad_beta0 = 0.0;
    Eigen::VectorXd grad_beta, grad_u, grad_v;
};

// Log posterior of the latent state at fixed hyperparameters, including the
// hyperprior terms (with the Jacobians of the internal log/logit
// parameterisation) so that differences across hyper points are meaningful.
PosteriorEval log_posterior(const LatentState& state, const Hyperparameters& hyper,
                            const ModelSpec& spec);

// Active linear constraints as rows over the full latent vector
// (beta0, beta, u*, v). The default is the structure-matrix constraint set on
// u*; rsr mode adds orthogonality of the combined random component to the
// intercept and covariate columns.
Eigen::MatrixXd constraint_matrix(const ModelSpec& spec, const Hyperparameters& hyper);

// Euclidean projection onto the constraint set, for initial states and
// simulated fields. Mode finding uses the conditioning-by-kriging correction
// in the inference module instead.
struct Projector {
    Eigen::MatrixXd C;  // k x dim
    void apply(LatentState& state, const ModelSpec& spec) const;
};

Projector rsr_projection(const ModelSpec& spec, const Hyperparameters& hyper);

struct SimulationResult {
    CountGrid counts;
    LatentState truth;
    Eigen::VectorXd eta;
};

// Forward simulation: u* from the constrained scaled IGMRF by spectral
// sampling, v standard normal, counts Poisson. Deterministic under seed.
SimulationResult simulate(const ModelSpec& spec, const Hyperparameters& hyper, double beta0_true,
                          const Eigen::VectorXd& beta_true, std::uint64_t seed);

}
