#include <algorithm>
#include <cmath>
#include <vector>

#include "lgcp/errors.hpp"
#include "lgcp/inference.hpp"
#include "lgcp/rng.hpp"

namespace lgcp {

namespace {

struct Eval {
    double value = 0.0;
    Eigen::VectorXd grad;  // packed (beta0, beta, u, v)
};

// Joint log density with an optional data term, matching log_posterior when
// the data term is on.
Eval eval_joint(const ModelSpec& spec, const Eigen::VectorXd& w, const Hyperparameters& hyper,
                bool with_data) {
    const int n = spec.n(), p = spec.p();
    const double a = std::sqrt(hyper.phi / hyper.tau);
    const double b = std::sqrt((1.0 - hyper.phi) / hyper.tau);
    const Eigen::VectorXd coef = w.head(p + 1);
    const auto u = w.segment(p + 1, n);
    const auto v = w.segment(p + 1 + n, n);

    Eval out;
    out.grad = Eigen::VectorXd::Zero(w.size());
    if (with_data) {
        Eigen::MatrixXd X(n, p + 1);
        X.col(0).setOnes();
        for (int j = 0; j < p; ++j) X.col(1 + j) = spec.covariates.values.col(j);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y[i] = static_cast<double>(spec.counts.counts[static_cast<std::size_t>(i)]);
        const Eigen::VectorXd eta = X * coef + a * u + b * v;
        const LikelihoodEval lik =
            log_likelihood_core(eta, y, spec.exposure(), spec.likelihood, spec.gaussian_obs_prec);
        out.value += lik.value;
        out.grad.head(p + 1) += X.transpose() * lik.grad;
        out.grad.segment(p + 1, n) += a * lik.grad;
        out.grad.segment(p + 1 + n, n) += b * lik.grad;
    }

    const double kb = spec.beta_prec;
    const double coef_const = 0.5 * std::log(kb / (2.0 * M_PI));
    const Eigen::VectorXd Ru = spec.prec.scaled * u;
    out.value += -0.5 * kb * coef.squaredNorm() + coef_const * (p + 1);
    out.value += -0.5 * u.dot(Ru);
    out.value += -0.5 * v.squaredNorm() - 0.5 * n * std::log(2.0 * M_PI);
    out.value += spec.prec_prior.log_density_tau(hyper.tau) + hyper.log_tau();
    out.value += spec.mix_prior.log_density_logit(hyper.logit_phi());
    out.grad.head(p + 1) += -kb * coef;
    out.grad.segment(p + 1, n) += -Ru;
    out.grad.segment(p + 1 + n, n) += -v;
    return out;
}

double autocorr_ess(const std::vector<double>& x) {
    const int m = static_cast<int>(x.size());
    if (m < 4) return static_cast<double>(m);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= m;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= m;
    if (!(var > 0.0)) return static_cast<double>(m);
    double acc = 0.0;
    const int max_lag = std::min(m - 1, 200);
    for (int lag = 1; lag <= max_lag; ++lag) {
        double c = 0.0;
        for (int t = 0; t + lag < m; ++t) c += (x[static_cast<std::size_t>(t)] - mean) * (x[static_cast<std::size_t>(t + lag)] - mean);
        c /= (m * var);
        if (c < 0.05) break;
        acc += c;
    }
    return static_cast<double>(m) / (1.0 + 2.0 * acc);
}

}  // namespace

McmcResult mcmc_oracle(const ModelSpec& spec, int iterations, std::uint64_t seed,
                       const McmcOptions& opts) {
    spec.validate();
    const int n = spec.n(), p = spec.p(), dim = spec.dim();
    if (n > 100)
        throw InputError("mcmc_oracle is limited to 100 cells, got " + std::to_string(n));
    if (spec.rsr) throw InputError("mcmc_oracle does not support restricted regression");
    if (iterations < 10) throw InputError("mcmc_oracle needs at least 10 iterations");

    const Hyperparameters h0 = Hyperparameters::from_internal(0.0, 0.0);
    const Eigen::MatrixXd C = constraint_matrix(spec, h0);
    const int k = static_cast<int>(C.rows());

    // orthonormal basis of the constraint null space
    Eigen::MatrixXd B;
    if (k > 0) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(C.transpose());
        const Eigen::MatrixXd Qfull = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
        B = Qfull.rightCols(dim - k);
    } else {
        B = Eigen::MatrixXd::Identity(dim, dim);
    }
    const int rdim = static_cast<int>(B.cols());

    const int burnin = opts.burnin < 0 ? iterations / 5 : opts.burnin;
    if (burnin >= iterations) throw InputError("mcmc burn-in exceeds the iteration count");
    const int thin = std::max(opts.thin, 1);
    const bool with_data = !opts.prior_only;

    Rng rng(seed);

    Eigen::VectorXd z = Eigen::VectorXd::Zero(rdim);
    {
        Eigen::VectorXd w0 = Eigen::VectorXd::Zero(dim);
        double total = 0.0;
        for (long c : spec.counts.counts) total += static_cast<double>(c);
        w0[0] = std::log(std::max(total, 0.5) / spec.exposure().sum());
        z = B.transpose() * w0;
    }
    double lt = 0.0, lp = 0.0;
    Hyperparameters hyper = Hyperparameters::from_internal(lt, lp);
    Eval cur = eval_joint(spec, B * z, hyper, with_data);

    double log_eps = std::log(0.1), log_eps_h = std::log(0.5);
    long acc_mala = 0, acc_rw = 0, post_mala = 0, post_rw = 0, post_steps = 0;

    McmcResult result;
    std::vector<std::vector<double>> coef_draws(static_cast<std::size_t>(p + 1));
    std::vector<double> sigma_draws, phi_draws;

    for (int t = 0; t < iterations; ++t) {
        // latent MALA step in the reduced coordinates
        {
            const double eps = std::exp(log_eps);
            const Eigen::VectorXd gz = B.transpose() * cur.grad;
            Eigen::VectorXd noise(rdim);
            for (int i = 0; i < rdim; ++i) noise[i] = rng.normal();
            const Eigen::VectorXd zp = z + 0.5 * eps * eps * gz + eps * noise;
            double alpha = 0.0;
            bool ok = true;
            Eval cand;
            try {
                cand = eval_joint(spec, B * zp, hyper, with_data);
            } catch (const NumericalError&) {
                ok = false;
            }
            if (ok) {
                const Eigen::VectorXd gzp = B.transpose() * cand.grad;
                const double fwd = -(zp - z - 0.5 * eps * eps * gz).squaredNorm() / (2.0 * eps * eps);
                const double bwd = -(z - zp - 0.5 * eps * eps * gzp).squaredNorm() / (2.0 * eps * eps);
                alpha = std::min(1.0, std::exp(cand.value - cur.value + bwd - fwd));
            }
            if (ok && rng.uniform() < alpha) {
                z = zp;
                cur = cand;
                ++acc_mala;
                if (t >= burnin) ++post_mala;
            }
            if (t < burnin)
                log_eps += std::pow(t + 1.0, -0.6) * (alpha - opts.target_accept_mala);
        }

        // hyper random-walk step
        {
            const double eps = std::exp(log_eps_h);
            const double ltp = lt + eps * rng.normal();
            const double lpp = lp + eps * rng.normal();
            double alpha = 0.0;
            bool ok = true;
            Eval cand;
            Hyperparameters hp;
            try {
                hp = Hyperparameters::from_internal(ltp, lpp);
                cand = eval_joint(spec, B * z, hp, with_data);
            } catch (const NumericalError&) {
                ok = false;
            }
            if (ok) alpha = std::min(1.0, std::exp(cand.value - cur.value));
            if (ok && rng.uniform() < alpha) {
                lt = ltp;
                lp = lpp;
                hyper = hp;
                cur = cand;
                ++acc_rw;
                if (t >= burnin) ++post_rw;
            }
            if (t < burnin)
                log_eps_h += std::pow(t + 1.0, -0.6) * (alpha - opts.target_accept_rw);
        }

        if (t >= burnin) {
            ++post_steps;
            if ((t - burnin) % thin == 0) {
                const Eigen::VectorXd w = B * z;
                for (int j = 0; j <= p; ++j) coef_draws[static_cast<std::size_t>(j)].push_back(w[j]);
                sigma_draws.push_back(std::exp(-0.5 * lt));
                phi_draws.push_back(1.0 / (1.0 + std::exp(-lp)));
            }
        }
    }

    const std::size_t kept = sigma_draws.size();
    result.coef_samples.resize(static_cast<Eigen::Index>(kept), p + 1);
    for (int j = 0; j <= p; ++j)
        for (std::size_t s = 0; s < kept; ++s)
            result.coef_samples(static_cast<Eigen::Index>(s), j) = coef_draws[static_cast<std::size_t>(j)][s];
    result.sigma_samples = Eigen::Map<Eigen::VectorXd>(sigma_draws.data(), static_cast<Eigen::Index>(kept));
    result.phi_samples = Eigen::Map<Eigen::VectorXd>(phi_draws.data(), static_cast<Eigen::Index>(kept));
    result.accept_mala = post_steps > 0 ? static_cast<double>(post_mala) / post_steps
                                        : static_cast<double>(acc_mala) / iterations;
    result.accept_rw = post_steps > 0 ? static_cast<double>(post_rw) / post_steps
                                      : static_cast<double>(acc_rw) / iterations;
    result.ess_coef.resize(p + 1);
    for (int j = 0; j <= p; ++j) result.ess_coef[j] = autocorr_ess(coef_draws[static_cast<std::size_t>(j)]);
    result.ess_sigma = autocorr_ess(sigma_draws);
    result.ess_phi = autocorr_ess(phi_draws);
    result.acceptance_warning = result.accept_mala < 0.1 || result.accept_mala > 0.9 ||
                                result.accept_rw < 0.1 || result.accept_rw > 0.9;
    return result;
}

}
