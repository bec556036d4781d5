#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "lgcp/errors.hpp"
#include "lgcp/inference.hpp"
#include "lgcp/model.hpp"
#include "support.hpp"

using namespace lgcp;

namespace {

double sample_quantile(const Eigen::VectorXd& v, double p) {
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end());
    const double pos = p * (s.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= s.size()) return s.back();
    const double frac = pos - i;
    return s[i] * (1.0 - frac) + s[i + 1] * frac;
}

}

TEST_CASE("chains are deterministic in the seed") {
    ModelSpec spec = testsup::make_spec(4, 4, 0, 1, 1.0, 0.01, true);
    const Hyperparameters truth = {1.0, 0.5};
    spec.counts = simulate(spec, truth, std::log(100.0), Eigen::VectorXd(), 3).counts;
    const McmcResult a = mcmc_oracle(spec, 2000, 42);
    const McmcResult b = mcmc_oracle(spec, 2000, 42);
    const McmcResult c = mcmc_oracle(spec, 2000, 43);
    CHECK((a.sigma_samples - b.sigma_samples).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.coef_samples - b.coef_samples).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.sigma_samples - c.sigma_samples).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("thinning and burn-in control the kept sample count") {
    ModelSpec spec = testsup::make_spec(4, 4, 0, 2, 1.0, 0.01, true);
    spec.counts = simulate(spec, {1.0, 0.5}, std::log(80.0), Eigen::VectorXd(), 5).counts;
    McmcOptions opts;
    opts.burnin = 200;
    opts.thin = 10;
    const McmcResult res = mcmc_oracle(spec, 1000, 7, opts);
    CHECK(res.sigma_samples.size() == 80);
    CHECK(res.coef_samples.rows() == 80);
    CHECK(res.coef_samples.cols() == 1);
    CHECK(res.phi_samples.size() == 80);
}

TEST_CASE("prior-only sampling reproduces the sigma prior quantiles") {
    ModelSpec spec = testsup::make_spec(4, 4, 0, 3, 0.5, 0.01, true);
    McmcOptions opts;
    opts.prior_only = true;
    const McmcResult res = mcmc_oracle(spec, 300000, 11, opts);
    CHECK_FALSE(res.acceptance_warning);
    for (double p : {0.25, 0.5, 0.75}) {
        const double chain_q = sample_quantile(res.sigma_samples, p);
        const double prior_q = spec.prec_prior.quantile_sigma(p);
        CHECK(chain_q == doctest::Approx(prior_q).epsilon(0.02));
    }
    // phi marginal should match the mix prior cdf at the median
    const double phi_med = sample_quantile(res.phi_samples, 0.5);
    CHECK(spec.mix_prior.cdf_phi(phi_med) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("posterior chain tracks the laplace fit on a well-identified instance") {
    ModelSpec spec = testsup::make_spec(5, 5, 0, 4, 1.0, 0.01, true);
    const Hyperparameters truth = {1.0, 0.6};
    spec.counts = simulate(spec, truth, std::log(1000.0), Eigen::VectorXd(), 13).counts;
    FitOptions fopts;
    fopts.compute_dic = false;
    fopts.grid_n_tau = 7;
    fopts.grid_n_phi = 7;
    const FitResult lap = fit(spec, fopts);
    const McmcResult chain = mcmc_oracle(spec, 30000, 17);
    CHECK_FALSE(chain.acceptance_warning);
    CHECK(chain.accept_mala > 0.1);
    CHECK(chain.accept_mala < 0.9);
    CHECK(chain.accept_rw > 0.1);
    CHECK(chain.accept_rw < 0.9);
    const double b0 = chain.coef_samples.col(0).mean();
    CHECK(std::abs(b0 - lap.beta_marginals[0].mean) < 0.2);
    CHECK(chain.ess_sigma > 1.0);
    CHECK(chain.ess_sigma <= chain.sigma_samples.size());
    CHECK(chain.ess_coef(0) > 1.0);
}

TEST_CASE("an unreachable acceptance target raises the warning flag") {
    ModelSpec spec = testsup::make_spec(4, 4, 0, 5, 1.0, 0.01, true);
    spec.counts = simulate(spec, {1.0, 0.5}, std::log(60.0), Eigen::VectorXd(), 19).counts;
    McmcOptions opts;
    opts.target_accept_rw = 0.98;
    const McmcResult res = mcmc_oracle(spec, 6000, 23, opts);
    CHECK(res.accept_rw > 0.9);
    CHECK(res.acceptance_warning);
}

TEST_CASE("the oracle refuses oversized or restricted models") {
    ModelSpec big = testsup::make_spec(11, 11, 0, 6);
    CHECK_THROWS_AS(mcmc_oracle(big, 1000, 1), InputError);
    ModelSpec rsr = testsup::make_spec(5, 5, 1, 7);
    rsr.rsr = true;
    CHECK_THROWS_AS(mcmc_oracle(rsr, 1000, 1), InputError);
    ModelSpec ok = testsup::make_spec(5, 5, 0, 8);
    CHECK_THROWS_AS(mcmc_oracle(ok, 0, 1), InputError);
}
