#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "lgcp/errors.hpp"
#include "lgcp/inference.hpp"
#include "lgcp/model.hpp"
#include "lgcp/rng.hpp"
#include "support.hpp"

using namespace lgcp;

namespace {

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::ArrayXd x = a.array() - a.mean();
    const Eigen::ArrayXd y = b.array() - b.mean();
    return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

// Dense Hessian of -log_posterior by central differences of the packed
// gradient. For the gaussian observation model the posterior is exactly
// quadratic, so this is exact up to rounding.
Eigen::MatrixXd dense_hessian(const ModelSpec& spec, const Hyperparameters& hyper) {
    const int n = spec.n(), p = spec.p(), d = spec.dim();
    const double h = 1e-3;
    Eigen::MatrixXd H(d, d);
    const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(d);
    for (int j = 0; j < d; ++j) {
        Eigen::VectorXd wp = w0, wm = w0;
        wp(j) += h;
        wm(j) -= h;
        const Eigen::VectorXd gp =
            testsup::pack_grad(log_posterior(testsup::unpack_state(wp, n, p), hyper, spec), n, p);
        const Eigen::VectorXd gm =
            testsup::pack_grad(log_posterior(testsup::unpack_state(wm, n, p), hyper, spec), n, p);
        H.col(j) = -(gp - gm) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
}

double mixture_coef_mean(const std::vector<HyperNode>& nodes, int j, std::size_t skip) {
    double wsum = 0.0, msum = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (k == skip) continue;
        wsum += nodes[k].weight;
        msum += nodes[k].weight * nodes[k].coef_mean[j];
    }
    return msum / wsum;
}

}

TEST_CASE("empty pattern pushes the intercept down and the fields to zero") {
    const ModelSpec spec = testsup::make_spec(5, 5, 0, 1);
    const Hyperparameters h = {1.0, 0.5};
    const LaplaceResult lap = laplace_fit(spec, h);
    CHECK(lap.converged);
    CHECK(lap.mode.beta0 < -1.0);
    CHECK(lap.mode.u_star.cwiseAbs().maxCoeff() < 0.1);
    CHECK(lap.mode.v.cwiseAbs().maxCoeff() < 0.1);
    const Eigen::VectorXd eta = linear_predictor(lap.mode, h, spec);
    CHECK((eta - lap.eta_mode).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("laplace evidence is exact for the gaussian observation model") {
    ModelSpec spec = testsup::make_spec(4, 4, 1, 2);
    spec.likelihood = Likelihood::gaussian;
    spec.gaussian_obs_prec = 1.5;
    // pseudo-observations on the eta scale
    Rng rng(5);
    for (auto& c : spec.counts.counts) c = 0;
    CountGrid& grid = spec.counts;
    for (std::size_t i = 0; i < grid.counts.size(); ++i)
        grid.counts[i] = static_cast<long>(i % 3);

    const Hyperparameters h = {1.3, 0.45};
    const LaplaceResult lap = laplace_fit(spec, h);
    REQUIRE(lap.converged);

    // dense reference: quadratic posterior, constraint handled by a null
    // space basis from the QR of C^T
    const int n = spec.n(), p = spec.p(), d = spec.dim();
    const Eigen::MatrixXd C = constraint_matrix(spec, h);
    const int k = static_cast<int>(C.rows());
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(C.transpose());
    const Eigen::MatrixXd B =
        Eigen::MatrixXd(qr.householderQ()).rightCols(d - k);

    const Eigen::MatrixXd H = dense_hessian(spec, h);
    const LatentState zero = testsup::unpack_state(Eigen::VectorXd::Zero(d), n, p);
    const PosteriorEval at0 = log_posterior(zero, h, spec);
    const Eigen::VectorXd g0 = testsup::pack_grad(at0, n, p);

    const Eigen::MatrixXd Hr = B.transpose() * H * B;
    const Eigen::VectorXd z = Hr.ldlt().solve(B.transpose() * g0);
    const Eigen::VectorXd wmode = B * z;
    const double fmode =
        log_posterior(testsup::unpack_state(wmode, n, p), h, spec).value;
    const double logdet = Eigen::LDLT<Eigen::MatrixXd>(Hr).vectorD().array().log().sum();
    const double evidence = fmode + 0.5 * (d - k) * std::log(2.0 * M_PI) - 0.5 * logdet;

    CHECK(lap.log_marginal == doctest::Approx(evidence).epsilon(1e-8));
    const Eigen::VectorXd wlib = testsup::pack_state(lap.mode);
    CHECK((wlib - wmode).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mode recovers the simulated surface on a well-informed lattice") {
    ModelSpec spec = testsup::make_spec(10, 20, 0, 3, 1.0, 0.01, true);
    const Hyperparameters truth = {1.0, 0.7};
    const SimulationResult sim = simulate(spec, truth, std::log(4000.0), Eigen::VectorXd(), 9);
    spec.counts = sim.counts;
    const LaplaceResult lap = laplace_fit(spec, truth);
    REQUIRE(lap.converged);
    CHECK(pearson(lap.eta_mode, sim.eta) > 0.8);
}

TEST_CASE("warm starts do not change the answer") {
    ModelSpec spec = testsup::make_spec(6, 6, 1, 4, 1.0, 0.01, true);
    const Hyperparameters truth = {2.0, 0.5};
    Eigen::VectorXd beta(1);
    beta << 0.4;
    spec.counts = simulate(spec, truth, std::log(600.0), beta, 11).counts;
    const LaplaceResult cold = laplace_fit(spec, truth);
    const LaplaceResult warm = laplace_fit(spec, truth, {}, &cold.mode);
    CHECK(warm.converged);
    CHECK(warm.iterations <= cold.iterations);
    CHECK(std::abs(warm.mode.beta0 - cold.mode.beta0) < 1e-6);
    CHECK((warm.mode.u_star - cold.mode.u_star).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("a degenerate field prior collapses the fit onto the GLM") {
    ModelSpec spec = testsup::make_spec(8, 8, 1, 5, 0.001, 0.01, true);
    const Hyperparameters truth = {4.0, 0.5};
    Eigen::VectorXd beta(1);
    beta << 0.5;
    spec.counts = simulate(spec, truth, std::log(900.0), beta, 13).counts;
    FitOptions opts;
    opts.compute_dic = false;
    opts.grid_n_tau = 5;
    opts.grid_n_phi = 5;
    const FitResult full = fit(spec, opts);
    const FitResult glm = glm_fit(spec, opts);
    for (std::size_t j = 0; j < full.beta_marginals.size(); ++j) {
        const MarginalSummary& a = full.beta_marginals[j];
        const MarginalSummary& b = glm.beta_marginals[j];
        CHECK(std::abs(a.mean - b.mean) < 2e-3 * (1.0 + std::abs(b.mean)));
        const double wa = a.hi - a.lo, wb = b.hi - b.lo;
        CHECK(wa / wb == doctest::Approx(1.0).epsilon(0.10));
    }
}

TEST_CASE("glm intercept-only estimate is the log rate") {
    ModelSpec spec = testsup::make_spec(5, 5, 0, 6);
    Rng rng(21);
    long total = 0;
    for (auto& c : spec.counts.counts) {
        c = rng.poisson(40.0);
        total += c;
    }
    const FitResult res = glm_fit(spec);
    // window area is 1, so the aggregate rate is just the total count
    CHECK(res.beta_marginals[0].mean ==
          doctest::Approx(std::log(static_cast<double>(total))).epsilon(1e-3));
    CHECK(res.diagnostics.method == "glm");
    REQUIRE(res.nodes.size() == 1);
    CHECK(res.nodes[0].weight == doctest::Approx(1.0));
}

TEST_CASE("glm intervals cover at close to the nominal rate") {
    const double beta_true = 0.4;
    int covered = 0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
        ModelSpec spec = testsup::make_spec(6, 6, 1, 700 + r);
        Rng rng(900 + r);
        for (int i = 0; i < spec.n(); ++i) {
            const double mean = spec.counts.areas(i) *
                                std::exp(std::log(150.0) + beta_true * spec.covariates.values(i, 0));
            spec.counts.counts[static_cast<std::size_t>(i)] = rng.poisson(mean);
        }
        const FitResult res = glm_fit(spec);
        const MarginalSummary& m = res.beta_marginals[1];
        if (m.lo <= beta_true && beta_true <= m.hi) ++covered;
    }
    CHECK(covered >= 90);
}

TEST_CASE("glm DIC agrees with direct quadrature on a single cell") {
    ModelSpec spec;
    Window w;
    w.nrow = 1;
    w.ncol = 1;
    w.validate();
    spec.counts.window = w;
    spec.counts.counts = {500};
    spec.counts.areas = Eigen::VectorXd::Ones(1);
    const FitResult res = glm_fit(spec);

    // exact posterior of beta0: density proportional to
    // exp(y b - e^b - kappa b^2 / 2); deviance 2(e^b - y b + ln y!)
    const double y = 500.0, kappa = 1e-3;
    const double bhat = res.beta_marginals[0].mean;
    const double sd = res.beta_marginals[0].sd;
    auto logpost = [&](double b) { return y * b - std::exp(b) - 0.5 * kappa * b * b; };
    auto deviance = [&](double b) {
        return 2.0 * (std::exp(b) - y * b + std::lgamma(y + 1.0));
    };
    const double lo = bhat - 10.0 * sd, hi = bhat + 10.0 * sd;
    const int m = 20001;
    const double step = (hi - lo) / (m - 1);
    double norm = 0.0, mean_dev = 0.0, mean_b = 0.0;
    const double shift = logpost(bhat);
    for (int i = 0; i < m; ++i) {
        const double b = lo + i * step;
        const double wgt = std::exp(logpost(b) - shift) * (i == 0 || i == m - 1 ? 0.5 : 1.0);
        norm += wgt;
        mean_dev += wgt * deviance(b);
        mean_b += wgt * b;
    }
    mean_dev /= norm;
    mean_b /= norm;
    const double dic_oracle = 2.0 * mean_dev - deviance(mean_b);
    CHECK(res.dic == doctest::Approx(dic_oracle).epsilon(0.02));
    // effective number of parameters is about one
    CHECK(res.diagnostics.mean_deviance - res.diagnostics.deviance_at_mean ==
          doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("full fit recovers strong simulated coefficients") {
    ModelSpec spec = testsup::make_spec(8, 8, 1, 7, 1.0, 0.01, true);
    const Hyperparameters truth = {4.0, 0.7};
    Eigen::VectorXd beta(1);
    beta << 0.5;
    spec.counts = simulate(spec, truth, std::log(1500.0), beta, 17).counts;
    FitOptions opts;
    opts.compute_dic = false;
    const FitResult res = fit(spec, opts);

    REQUIRE(res.beta_marginals.size() == 2);
    CHECK(res.beta_marginals[1].lo < 0.5);
    CHECK(res.beta_marginals[1].hi > 0.5);
    CHECK(res.beta_marginals[1].hi - res.beta_marginals[1].lo < 0.5);

    double wsum = 0.0;
    for (const auto& node : res.nodes) wsum += node.weight;
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(res.diagnostics.method == "laplace-grid");
    CHECK(res.diagnostics.boundary_mass_max <= 0.01);

    // marginal density tables are proper densities over their grids
    for (const DensityTable* t : {&res.sigma_marginal, &res.phi_marginal}) {
        REQUIRE(t->x.size() == t->density.size());
        CHECK(t->density.minCoeff() >= 0.0);
        double mass = 0.0;
        for (int i = 0; i + 1 < t->x.size(); ++i)
            mass += 0.5 * (t->density(i) + t->density(i + 1)) * (t->x(i + 1) - t->x(i));
        CHECK(mass == doctest::Approx(1.0).epsilon(0.02));
        CHECK(t->lo < t->mean);
        CHECK(t->mean < t->hi);
    }
    CHECK(res.phi_marginal.x.minCoeff() >= 0.0);
    CHECK(res.phi_marginal.x.maxCoeff() <= 1.0);
    CHECK(res.sigma_marginal.x.minCoeff() >= 0.0);
}

TEST_CASE("fit is deterministic") {
    ModelSpec spec = testsup::make_spec(6, 6, 0, 8, 1.0, 0.01, true);
    const Hyperparameters truth = {2.0, 0.5};
    spec.counts = simulate(spec, truth, std::log(400.0), Eigen::VectorXd(), 23).counts;
    FitOptions opts;
    opts.compute_dic = false;
    opts.grid_n_tau = 5;
    opts.grid_n_phi = 5;
    const FitResult a = fit(spec, opts);
    const FitResult b = fit(spec, opts);
    CHECK(a.beta_marginals[0].mean == b.beta_marginals[0].mean);
    CHECK(a.sigma_marginal.mean == b.sigma_marginal.mean);
    CHECK((a.predictor_surface - b.predictor_surface).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dropping the lightest grid node leaves the coefficients unchanged") {
    ModelSpec spec = testsup::make_spec(8, 8, 1, 9, 1.0, 0.01, true);
    const Hyperparameters truth = {2.0, 0.6};
    Eigen::VectorXd beta(1);
    beta << -0.4;
    spec.counts = simulate(spec, truth, std::log(800.0), beta, 29).counts;
    FitOptions opts;
    opts.compute_dic = false;
    const FitResult res = fit(spec, opts);
    REQUIRE(res.nodes.size() > 2);
    std::size_t lightest = 0;
    for (std::size_t k = 1; k < res.nodes.size(); ++k)
        if (res.nodes[k].weight < res.nodes[lightest].weight) lightest = k;
    for (int j = 0; j < 2; ++j) {
        const double with = mixture_coef_mean(res.nodes, j, res.nodes.size());
        const double without = mixture_coef_mean(res.nodes, j, lightest);
        CHECK(std::abs(with - without) < 1e-3);
    }
}

TEST_CASE("a cramped hyper grid expands until the boundary mass is small") {
    ModelSpec spec = testsup::make_spec(6, 6, 0, 10, 1.0, 0.01, true);
    const Hyperparameters truth = {1.0, 0.5};
    spec.counts = simulate(spec, truth, std::log(200.0), Eigen::VectorXd(), 31).counts;
    FitOptions opts;
    opts.compute_dic = false;
    opts.grid_n_tau = 5;
    opts.grid_n_phi = 5;
    opts.grid_span_sd = 0.4;
    const FitResult res = fit(spec, opts);
    CHECK(res.diagnostics.expansions >= 1);
    CHECK(res.diagnostics.boundary_mass_max <= 0.01);

    FitOptions rigid = opts;
    rigid.max_expansions = 0;
    CHECK_THROWS_WITH_AS(fit(spec, rigid), doctest::Contains("boundary"), NumericalError);
}

TEST_CASE("decomposition identity holds and strong structure dominates") {
    ModelSpec spec = testsup::make_spec(10, 10, 0, 11, 1.0, 0.01, true);
    const Hyperparameters truth = {1.0, 0.95};
    spec.counts = simulate(spec, truth, std::log(2000.0), Eigen::VectorXd(), 37).counts;
    FitOptions opts;
    opts.compute_dic = false;
    opts.grid_n_tau = 7;
    opts.grid_n_phi = 7;
    const FitResult res = fit(spec, opts);
    const Decomposition dec = decompose(res);
    const Eigen::VectorXd recon = Eigen::VectorXd::Constant(spec.n(), dec.intercept) + dec.fixed +
                                  dec.structured + dec.error;
    CHECK((recon - dec.predictor).cwiseAbs().maxCoeff() < 1e-8);

    // simulated at phi 0.95, so the structured surface should carry clearly
    // more variance than the error surface even after posterior shrinkage
    const double sd_struct = std::sqrt(dec.structured.array().square().mean());
    const double sd_err = std::sqrt(dec.error.array().square().mean());
    CHECK(sd_err / sd_struct < 0.6);
}

TEST_CASE("deviance information is computed only for poisson models") {
    ModelSpec spec = testsup::make_spec(5, 5, 0, 12, 1.0, 0.01, true);
    spec.likelihood = Likelihood::gaussian;
    FitOptions opts;
    opts.grid_n_tau = 3;
    opts.grid_n_phi = 3;
    opts.compute_dic = true;
    CHECK_THROWS_AS(fit(spec, opts), NumericalError);
}

TEST_CASE("dic_value combines the two deviances") {
    CHECK(dic_value(10.0, 8.0) == doctest::Approx(12.0));
}
