#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "lgcp/cli.hpp"
#include "lgcp/inference.hpp"
#include "lgcp/model.hpp"
#include "lgcp/version.hpp"

namespace py = pybind11;
using namespace lgcp;

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

ModelSpec build_spec(const std::vector<long>& counts, const std::vector<std::vector<double>>& covariates,
                     int nrow, int ncol, double u_sigma, double alpha_sigma, double u_phi,
                     double alpha_phi, const std::string& gv_method, bool rsr, bool unit_exposure,
                     bool keep_basis) {
    if (static_cast<int>(counts.size()) != nrow * ncol)
        throw InputError("counts length does not match nrow*ncol");
    ModelSpec spec;
    spec.counts.window = Window{0.0, 1.0, 0.0, 1.0, nrow, ncol};
    spec.counts.counts = counts;
    spec.counts.areas = Eigen::VectorXd::Constant(nrow * ncol, spec.counts.window.cell_area());
    spec.covariates.standardized = true;
    spec.covariates.values.resize(nrow * ncol, static_cast<Eigen::Index>(covariates.size()));
    for (std::size_t j = 0; j < covariates.size(); ++j) {
        if (static_cast<int>(covariates[j].size()) != nrow * ncol)
            throw InputError("covariate column " + std::to_string(j) + " has the wrong length");
        spec.covariates.values.col(static_cast<Eigen::Index>(j)) = to_eigen(covariates[j]);
        spec.covariates.names.push_back("x" + std::to_string(j + 1));
    }
    const StructureMatrix R = build_rw2d(nrow, ncol);
    spec.prec = scale_to_unit_gv(R, parse_gv_method(gv_method), 6000, keep_basis);
    spec.prec_prior = pc_prec_prior(u_sigma, alpha_sigma);
    const GvMethod mix_method =
        spec.prec.base_spectrum.size() > 0 ? GvMethod::exact : GvMethod::torus;
    spec.mix_prior = pc_mix_prior(u_phi, alpha_phi, spec.prec, 512, mix_method);
    spec.rsr = rsr;
    spec.unit_exposure = unit_exposure;
    return spec;
}

py::dict fit_to_dict(const FitResult& fit) {
    py::dict out;
    py::list beta;
    for (std::size_t j = 0; j < fit.beta_marginals.size(); ++j) {
        py::dict b;
        b["name"] = fit.coef_names[j];
        b["mean"] = fit.beta_marginals[j].mean;
        b["sd"] = fit.beta_marginals[j].sd;
        b["lo"] = fit.beta_marginals[j].lo;
        b["hi"] = fit.beta_marginals[j].hi;
        beta.append(b);
    }
    out["beta"] = beta;
    py::dict sigma;
    sigma["mean"] = fit.sigma_marginal.mean;
    sigma["lo"] = fit.sigma_marginal.lo;
    sigma["hi"] = fit.sigma_marginal.hi;
    out["sigma"] = sigma;
    py::dict phi;
    phi["mean"] = fit.phi_marginal.mean;
    phi["lo"] = fit.phi_marginal.lo;
    phi["hi"] = fit.phi_marginal.hi;
    out["phi"] = phi;
    out["dic"] = fit.dic;
    out["method"] = fit.diagnostics.method;
    py::dict surf;
    surf["fixed"] = to_vec(fit.fixed_surface);
    surf["structured"] = to_vec(fit.structured_surface);
    surf["error"] = to_vec(fit.error_surface);
    surf["predictor"] = to_vec(fit.predictor_surface);
    out["surfaces"] = surf;
    out["intercept_mean"] = fit.intercept_mean;
    return out;
}

}  // namespace

PYBIND11_MODULE(lgcpgrid, m) {
    m.doc() = "Discretized log-Gaussian Cox process fitting on lattices";
    m.attr("__version__") = version;

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

    m.def(
        "scale_info",
        [](int nrow, int ncol, const std::string& method) {
            const StructureMatrix R = build_rw2d(nrow, ncol);
            const ScaledPrecision prec = scale_to_unit_gv(R, parse_gv_method(method));
            py::dict out;
            out["scale_factor"] = prec.scale_factor;
            out["gv_before"] = prec.gv_before;
            out["rank_deficiency"] = prec.base.rank_deficiency;
            out["method"] = gv_method_name(prec.method);
            return out;
        },
        py::arg("nrow"), py::arg("ncol"), py::arg("method") = "auto");

    m.def(
        "prec_prior",
        [](double u_sigma, double alpha_sigma) {
            const PcPrecPrior prior = pc_prec_prior(u_sigma, alpha_sigma);
            py::dict out;
            out["lambda"] = prior.lambda;
            out["mass_above_U"] = prec_prior_mass_above(prior, u_sigma);
            out["expected_sigma_fraction"] = expected_sigma_fraction(prior);
            return out;
        },
        py::arg("u_sigma"), py::arg("alpha_sigma") = 0.01);

    m.def(
        "sigma_density",
        [](double u_sigma, double alpha_sigma, const std::vector<double>& sigmas) {
            const PcPrecPrior prior = pc_prec_prior(u_sigma, alpha_sigma);
            std::vector<double> out;
            out.reserve(sigmas.size());
            for (double s : sigmas) out.push_back(prior.density_sigma(s));
            return out;
        },
        py::arg("u_sigma"), py::arg("alpha_sigma"), py::arg("sigmas"));

    m.def(
        "phi_distance",
        [](double phi, int nrow, int ncol, const std::string& method) {
            const StructureMatrix R = build_rw2d(nrow, ncol);
            const GvMethod gm = parse_gv_method(method);
            const ScaledPrecision prec =
                scale_to_unit_gv(R, gm == GvMethod::torus ? GvMethod::torus : GvMethod::exact);
            return phi_distance(phi, prec, gm == GvMethod::torus ? GvMethod::torus : GvMethod::exact);
        },
        py::arg("phi"), py::arg("nrow"), py::arg("ncol"), py::arg("method") = "torus");

    m.def(
        "phi_prior_table",
        [](double u_phi, double alpha_phi, int nrow, int ncol, const std::string& method) {
            const StructureMatrix R = build_rw2d(nrow, ncol);
            const GvMethod gm = parse_gv_method(method);
            const ScaledPrecision prec =
                scale_to_unit_gv(R, gm == GvMethod::torus ? GvMethod::torus : GvMethod::exact);
            const PcMixPrior mix = pc_mix_prior(u_phi, alpha_phi, prec, 512,
                                                gm == GvMethod::torus ? GvMethod::torus
                                                                      : GvMethod::exact);
            py::dict out;
            out["theta"] = mix.theta;
            out["d_one"] = mix.d_one;
            out["table_mass"] = mix.table_mass();
            out["cdf_at_U"] = mix.cdf_phi(u_phi);
            return out;
        },
        py::arg("u_phi"), py::arg("alpha_phi"), py::arg("nrow"), py::arg("ncol"),
        py::arg("method") = "torus");

    m.def(
        "simulate",
        [](int nrow, int ncol, double beta0, double tau, double phi, std::uint64_t seed,
           const std::vector<std::vector<double>>& covariates, const std::vector<double>& beta) {
            ModelSpec spec = build_spec(std::vector<long>(static_cast<std::size_t>(nrow) * ncol, 0),
                                        covariates, nrow, ncol, 1.0, 0.01, 0.5, 2.0 / 3.0, "auto",
                                        false, true, true);
            const SimulationResult sim =
                simulate(spec, Hyperparameters{tau, phi}, beta0, to_eigen(beta), seed);
            py::dict out;
            out["counts"] = sim.counts.counts;
            out["eta"] = to_vec(sim.eta);
            return out;
        },
        py::arg("nrow"), py::arg("ncol"), py::arg("beta0"), py::arg("tau"), py::arg("phi"),
        py::arg("seed") = 1,
        py::arg("covariates") = std::vector<std::vector<double>>(),
        py::arg("beta") = std::vector<double>());

    m.def(
        "fit",
        [](const std::vector<long>& counts, const std::vector<std::vector<double>>& covariates,
           int nrow, int ncol, double u_sigma, double alpha_sigma, double u_phi, double alpha_phi,
           const std::string& gv_method, bool rsr, bool unit_exposure, bool compute_dic,
           int grid_n, int workers) {
            ModelSpec spec = build_spec(counts, covariates, nrow, ncol, u_sigma, alpha_sigma,
                                        u_phi, alpha_phi, gv_method, rsr, unit_exposure, false);
            FitOptions opts;
            opts.compute_dic = compute_dic;
            opts.grid_n_tau = grid_n;
            opts.grid_n_phi = grid_n;
            opts.workers = workers;
            return fit_to_dict(fit(spec, opts));
        },
        py::arg("counts"), py::arg("covariates"), py::arg("nrow"), py::arg("ncol"),
        py::arg("u_sigma") = 1.0, py::arg("alpha_sigma") = 0.01, py::arg("u_phi") = 0.5,
        py::arg("alpha_phi") = 2.0 / 3.0, py::arg("gv_method") = "auto", py::arg("rsr") = false,
        py::arg("unit_exposure") = true, py::arg("compute_dic") = false, py::arg("grid_n") = 9,
        py::arg("workers") = 0);

    m.def(
        "glm",
        [](const std::vector<long>& counts, const std::vector<std::vector<double>>& covariates,
           int nrow, int ncol, bool unit_exposure) {
            ModelSpec spec;
            spec.counts.window = Window{0.0, 1.0, 0.0, 1.0, nrow, ncol};
            spec.counts.counts = counts;
            spec.counts.areas =
                Eigen::VectorXd::Constant(nrow * ncol, spec.counts.window.cell_area());
            spec.covariates.standardized = true;
            spec.covariates.values.resize(nrow * ncol, static_cast<Eigen::Index>(covariates.size()));
            for (std::size_t j = 0; j < covariates.size(); ++j) {
                spec.covariates.values.col(static_cast<Eigen::Index>(j)) = to_eigen(covariates[j]);
                spec.covariates.names.push_back("x" + std::to_string(j + 1));
            }
            spec.unit_exposure = unit_exposure;
            FitOptions opts;
            opts.compute_dic = false;
            return fit_to_dict(glm_fit(spec, opts));
        },
        py::arg("counts"), py::arg("covariates"), py::arg("nrow"), py::arg("ncol"),
        py::arg("unit_exposure") = true);
}
