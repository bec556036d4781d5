#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <string>
#include <vector>

#include "lgcp/model.hpp"

namespace lgcp {

struct FitOptions {
    int grid_n_tau = 9;
    int grid_n_phi = 9;
    double grid_span_sd = 3.0;
    int max_expansions = 3;
    double boundary_mass = 0.01;   // per-node weight limit on the grid boundary
    double newton_tol = 1e-8;
    int newton_max_iter = 100;
    int nm_max_iter = 250;
    double nm_tol = 1e-5;
    int workers = 0;               // 0: resolve from LGCP_WORKERS, default 1
    bool compute_dic = true;
    double init_log_tau = 0.0;
    double init_logit_phi = 0.0;
    int density_points = 257;      // knots in the sigma/phi marginal tables
};

struct LaplaceResult {
    LatentState mode;
    Eigen::SparseMatrix<double> gaussian_precision;
    double log_marginal = 0.0;
    Eigen::VectorXd eta_mode;
    int iterations = 0;
    bool converged = false;
};

// Newton mode finding of the latent field at fixed hyperparameters, with the
// active constraints enforced by conditioning by kriging, and the Laplace
// evidence with the constraint correction terms.
LaplaceResult laplace_fit(const ModelSpec& spec, const Hyperparameters& hyper,
                          const FitOptions& opts = {}, const LatentState* warm_start = nullptr);

struct MarginalSummary {
    double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;  // lo/hi: 2.5% and 97.5%
};

struct DensityTable {
    Eigen::VectorXd x, density;
    double mean = 0.0, lo = 0.0, hi = 0.0;
};

struct HyperNode {
    double log_tau = 0.0, logit_phi = 0.0;
    double quad_weight = 0.0;   // quadrature weight before normalization
    double log_joint = 0.0;     // unnormalized log posterior of hyper given data
    double weight = 0.0;        // normalized probability mass
    Eigen::VectorXd coef_mean, coef_sd;  // per-node Gaussian marginals of (beta0, beta)
};

struct FitDiagnostics {
    std::string method;             // "laplace-grid" or "glm"
    std::string gv_method;
    std::string mix_prior_method;
    bool unit_exposure = false;
    bool rsr = false;
    int nm_evaluations = 0;
    int expansions = 0;
    int total_newton_iterations = 0;
    double grid_lo_log_tau = 0.0, grid_hi_log_tau = 0.0;
    double grid_lo_logit_phi = 0.0, grid_hi_logit_phi = 0.0;
    double boundary_mass_max = 0.0;
    double mode_log_tau = 0.0, mode_logit_phi = 0.0;
    double mean_deviance = 0.0, deviance_at_mean = 0.0;
    std::size_t dropped_points = 0;
};

struct FitResult {
    std::vector<std::string> coef_names;           // "intercept" then covariates
    std::vector<MarginalSummary> beta_marginals;   // mixture over hyper nodes
    DensityTable sigma_marginal, phi_marginal;
    double intercept_mean = 0.0;
    Eigen::VectorXd fixed_surface;                 // covariate part, without intercept
    Eigen::VectorXd structured_surface;            // E[sqrt(phi/tau) u*]
    Eigen::VectorXd error_surface;                 // E[sqrt((1-phi)/tau) v]
    Eigen::VectorXd predictor_surface;             // E[eta]
    double dic = 0.0;
    std::vector<HyperNode> nodes;
    FitDiagnostics diagnostics;
};

FitResult fit(const ModelSpec& spec, const FitOptions& opts = {});

// Poisson GLM baseline (fixed effects only) with offset log cell area and the
// same Gaussian prior on the coefficients; asymptotic Gaussian intervals.
FitResult glm_fit(const ModelSpec& spec, const FitOptions& opts = {});

inline double dic_value(double mean_deviance, double deviance_at_mean) {
    return 2.0 * mean_deviance - deviance_at_mean;
}

struct Decomposition {
    Eigen::VectorXd fixed, structured, error, predictor;
    double intercept = 0.0;
};

// The four surfaces of a fit; checks the sum identity
// intercept + fixed + structured + error = predictor.
Decomposition decompose(const FitResult& fit);

struct McmcOptions {
    int burnin = -1;               // -1: iterations/5
    int thin = 1;
    double target_accept_mala = 0.574;
    double target_accept_rw = 0.234;
    bool prior_only = false;       // drop the data term (prior sampling check)
};

struct McmcResult {
    Eigen::MatrixXd coef_samples;  // kept x (1+p)
    Eigen::VectorXd sigma_samples, phi_samples;
    double accept_mala = 0.0, accept_rw = 0.0;
    Eigen::VectorXd ess_coef;
    double ess_sigma = 0.0, ess_phi = 0.0;
    bool acceptance_warning = false;
};

// Verification oracle for desk-scale instances (n <= 100): MALA on the latent
// block inside the constraint null space, random-walk Metropolis on
// (log tau, logit phi), step sizes adapted during burn-in only.
McmcResult mcmc_oracle(const ModelSpec& spec, int iterations, std::uint64_t seed,
                       const McmcOptions& opts = {});

}
