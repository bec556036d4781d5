#include "lgcp/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lgcp/errors.hpp"
#include "lgcp/io.hpp"
#include "lgcp/model.hpp"
#include "lgcp/parallel.hpp"
#include "lgcp/png.hpp"
#include "lgcp/rng.hpp"
#include "lgcp/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lgcp {

namespace {

std::string format_compact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_std(const std::vector<double>& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw InputError("short write to '" + path + "'");
}

void write_json_file(const std::string& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw InputError("config key '" + key + "' is not a boolean: '" + v + "'");
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InputError("config key '" + key + "' is not a number: '" + v + "'");
    }
}

int parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InputError("config key '" + key + "' is not an integer: '" + v + "'");
    }
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "pattern") {
        cfg.pattern_path = value;
    } else if (key == "covariates") {
        cfg.covariate_paths = split_list(value);
    } else if (key == "log_transform") {
        cfg.log_covariates = split_list(value);
    } else if (key == "out") {
        cfg.out_dir = value;
    } else if (key == "nrow") {
        cfg.nrow = parse_int(value, key);
    } else if (key == "ncol") {
        cfg.ncol = parse_int(value, key);
    } else if (key == "window") {
        const auto parts = split_list(value);
        if (parts.size() != 4)
            throw InputError("config key 'window' needs xmin,xmax,ymin,ymax");
        cfg.xmin = parse_double(parts[0], key);
        cfg.xmax = parse_double(parts[1], key);
        cfg.ymin = parse_double(parts[2], key);
        cfg.ymax = parse_double(parts[3], key);
        cfg.have_window = true;
    } else if (key == "u_sigma") {
        cfg.u_sigma.clear();
        for (const auto& part : split_list(value)) cfg.u_sigma.push_back(parse_double(part, key));
    } else if (key == "alpha_sigma") {
        cfg.alpha_sigma = parse_double(value, key);
    } else if (key == "u_phi") {
        cfg.u_phi = parse_double(value, key);
    } else if (key == "alpha_phi") {
        cfg.alpha_phi = parse_double(value, key);
    } else if (key == "vif_threshold") {
        cfg.vif_threshold = parse_double(value, key);
    } else if (key == "glm_prescreen") {
        cfg.glm_prescreen = parse_bool(value, key);
    } else if (key == "unit_exposure") {
        cfg.unit_exposure = parse_bool(value, key);
    } else if (key == "gv_method") {
        cfg.gv_method = value;
    } else if (key == "grid_n") {
        cfg.grid_n = parse_int(value, key);
    } else if (key == "grid_span") {
        cfg.grid_span = parse_double(value, key);
    } else if (key == "compute_dic") {
        cfg.compute_dic = parse_bool(value, key);
    } else if (key == "workers") {
        cfg.workers = parse_int(value, key);
    } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "true_beta0") {
        cfg.true_beta0 = parse_double(value, key);
    } else if (key == "true_beta") {
        cfg.true_beta.clear();
        for (const auto& part : split_list(value)) cfg.true_beta.push_back(parse_double(part, key));
    } else if (key == "true_tau") {
        cfg.true_tau = parse_double(value, key);
    } else if (key == "true_phi") {
        cfg.true_phi = parse_double(value, key);
    } else if (key == "ginv_csv") {
        cfg.ginv_csv = parse_bool(value, key);
    } else {
        throw InputError("unknown config key '" + key + "'");
    }
}

}  // namespace

Window RunConfig::window() const {
    Window w;
    w.xmin = xmin;
    w.xmax = xmax;
    w.ymin = ymin;
    w.ymax = ymax;
    w.nrow = nrow;
    w.ncol = ncol;
    return w;
}

void RunConfig::validate() const {
    if (u_sigma.empty()) throw InputError("the U_sigma list is empty");
    for (double u : u_sigma)
        if (!(u > 0.0)) throw InputError("U_sigma values must be positive");
    if (!(alpha_sigma > 0.0 && alpha_sigma < 1.0))
        throw InputError("alpha_sigma must lie in (0,1)");
    if (!(u_phi > 0.0 && u_phi < 1.0)) throw InputError("U_phi must lie in (0,1)");
    if (!(alpha_phi > 0.0 && alpha_phi < 1.0)) throw InputError("alpha_phi must lie in (0,1)");
    if (grid_n < 1) throw InputError("grid_n must be at least 1");
    if (!(grid_span > 0.0)) throw InputError("grid_span must be positive");
    parse_gv_method(gv_method);
    if (!pattern_path.empty() && !fs::exists(pattern_path))
        throw InputError("pattern file does not exist: " + pattern_path);
    for (const auto& path : covariate_paths)
        if (!fs::exists(path)) throw InputError("covariate file does not exist: " + path);
}

RunConfig read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(path + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto x = s.find_first_not_of(" \t\r");
            const auto y = s.find_last_not_of(" \t\r");
            return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw InputError(path + ":" + std::to_string(lineno) + ": empty key");
        apply_config_key(cfg, key, value);
    }
    return cfg;
}

GvMethod parse_gv_method(const std::string& name) {
    if (name == "exact") return GvMethod::exact;
    if (name == "torus") return GvMethod::torus;
    if (name == "auto" || name == "auto_select") return GvMethod::auto_select;
    throw InputError("unknown gv method '" + name + "' (expected exact, torus, or auto)");
}

json config_json(const RunConfig& cfg) {
    json j;
    j["mode"] = cfg.mode;
    j["pattern"] = cfg.pattern_path;
    j["covariates"] = cfg.covariate_paths;
    j["log_transform"] = cfg.log_covariates;
    j["out"] = cfg.out_dir;
    j["nrow"] = cfg.nrow;
    j["ncol"] = cfg.ncol;
    j["window"] = {cfg.xmin, cfg.xmax, cfg.ymin, cfg.ymax};
    j["u_sigma"] = cfg.u_sigma;
    j["alpha_sigma"] = cfg.alpha_sigma;
    j["u_phi"] = cfg.u_phi;
    j["alpha_phi"] = cfg.alpha_phi;
    j["vif_threshold"] = cfg.vif_threshold;
    j["glm_prescreen"] = cfg.glm_prescreen;
    j["unit_exposure"] = cfg.unit_exposure;
    j["gv_method"] = cfg.gv_method;
    j["grid_n"] = cfg.grid_n;
    j["grid_span"] = cfg.grid_span;
    j["compute_dic"] = cfg.compute_dic;
    j["workers"] = cfg.workers;
    j["seed"] = cfg.seed;
    if (cfg.mode == "simulate") {
        j["true_beta0"] = cfg.true_beta0;
        j["true_beta"] = cfg.true_beta;
        j["true_tau"] = cfg.true_tau;
        j["true_phi"] = cfg.true_phi;
    }
    j["version"] = version;
    return j;
}

namespace {

json marginal_json(const MarginalSummary& m) {
    return json{{"mean", m.mean}, {"sd", m.sd}, {"lo", m.lo}, {"hi", m.hi}};
}

MarginalSummary marginal_from_json(const json& j) {
    MarginalSummary m;
    m.mean = j.at("mean").get<double>();
    m.sd = j.at("sd").get<double>();
    m.lo = j.at("lo").get<double>();
    m.hi = j.at("hi").get<double>();
    return m;
}

json density_json(const DensityTable& t) {
    return json{{"x", to_std(t.x)},
                {"density", to_std(t.density)},
                {"mean", t.mean},
                {"lo", t.lo},
                {"hi", t.hi}};
}

DensityTable density_from_json(const json& j) {
    DensityTable t;
    t.x = from_std(j.at("x").get<std::vector<double>>());
    t.density = from_std(j.at("density").get<std::vector<double>>());
    t.mean = j.at("mean").get<double>();
    t.lo = j.at("lo").get<double>();
    t.hi = j.at("hi").get<double>();
    return t;
}

}  // namespace

json fit_result_json(const FitResult& fit) {
    json j;
    j["coef_names"] = fit.coef_names;
    json betas = json::array();
    for (std::size_t i = 0; i < fit.beta_marginals.size(); ++i) {
        json b = marginal_json(fit.beta_marginals[i]);
        b["name"] = fit.coef_names[i];
        betas.push_back(std::move(b));
    }
    j["beta"] = std::move(betas);
    j["sigma"] = density_json(fit.sigma_marginal);
    j["phi"] = density_json(fit.phi_marginal);
    j["intercept_mean"] = fit.intercept_mean;
    j["dic"] = fit.dic;
    j["surfaces"] = json{{"fixed", to_std(fit.fixed_surface)},
                         {"structured", to_std(fit.structured_surface)},
                         {"error", to_std(fit.error_surface)},
                         {"predictor", to_std(fit.predictor_surface)}};
    json nodes = json::array();
    for (const auto& hn : fit.nodes) {
        nodes.push_back(json{{"log_tau", hn.log_tau},
                             {"logit_phi", hn.logit_phi},
                             {"quad_weight", hn.quad_weight},
                             {"log_joint", hn.log_joint},
                             {"weight", hn.weight},
                             {"coef_mean", to_std(hn.coef_mean)},
                             {"coef_sd", to_std(hn.coef_sd)}});
    }
    j["nodes"] = std::move(nodes);
    const FitDiagnostics& d = fit.diagnostics;
    j["diagnostics"] = json{{"method", d.method},
                            {"gv_method", d.gv_method},
                            {"mix_prior_method", d.mix_prior_method},
                            {"unit_exposure", d.unit_exposure},
                            {"rsr", d.rsr},
                            {"nm_evaluations", d.nm_evaluations},
                            {"expansions", d.expansions},
                            {"total_newton_iterations", d.total_newton_iterations},
                            {"grid_lo_log_tau", d.grid_lo_log_tau},
                            {"grid_hi_log_tau", d.grid_hi_log_tau},
                            {"grid_lo_logit_phi", d.grid_lo_logit_phi},
                            {"grid_hi_logit_phi", d.grid_hi_logit_phi},
                            {"boundary_mass_max", d.boundary_mass_max},
                            {"mode_log_tau", d.mode_log_tau},
                            {"mode_logit_phi", d.mode_logit_phi},
                            {"mean_deviance", d.mean_deviance},
                            {"deviance_at_mean", d.deviance_at_mean},
                            {"dropped_points", d.dropped_points}};
    return j;
}

FitResult fit_result_from_json(const json& j) {
    FitResult fit;
    fit.coef_names = j.at("coef_names").get<std::vector<std::string>>();
    for (const auto& b : j.at("beta")) fit.beta_marginals.push_back(marginal_from_json(b));
    fit.sigma_marginal = density_from_json(j.at("sigma"));
    fit.phi_marginal = density_from_json(j.at("phi"));
    fit.intercept_mean = j.at("intercept_mean").get<double>();
    fit.dic = j.at("dic").get<double>();
    const json& s = j.at("surfaces");
    fit.fixed_surface = from_std(s.at("fixed").get<std::vector<double>>());
    fit.structured_surface = from_std(s.at("structured").get<std::vector<double>>());
    fit.error_surface = from_std(s.at("error").get<std::vector<double>>());
    fit.predictor_surface = from_std(s.at("predictor").get<std::vector<double>>());
    for (const auto& nj : j.at("nodes")) {
        HyperNode hn;
        hn.log_tau = nj.at("log_tau").get<double>();
        hn.logit_phi = nj.at("logit_phi").get<double>();
        hn.quad_weight = nj.at("quad_weight").get<double>();
        hn.log_joint = nj.at("log_joint").get<double>();
        hn.weight = nj.at("weight").get<double>();
        hn.coef_mean = from_std(nj.at("coef_mean").get<std::vector<double>>());
        hn.coef_sd = from_std(nj.at("coef_sd").get<std::vector<double>>());
        fit.nodes.push_back(std::move(hn));
    }
    const json& d = j.at("diagnostics");
    fit.diagnostics.method = d.at("method").get<std::string>();
    fit.diagnostics.gv_method = d.at("gv_method").get<std::string>();
    fit.diagnostics.mix_prior_method = d.at("mix_prior_method").get<std::string>();
    fit.diagnostics.unit_exposure = d.at("unit_exposure").get<bool>();
    fit.diagnostics.rsr = d.at("rsr").get<bool>();
    fit.diagnostics.nm_evaluations = d.at("nm_evaluations").get<int>();
    fit.diagnostics.expansions = d.at("expansions").get<int>();
    fit.diagnostics.total_newton_iterations = d.at("total_newton_iterations").get<int>();
    fit.diagnostics.grid_lo_log_tau = d.at("grid_lo_log_tau").get<double>();
    fit.diagnostics.grid_hi_log_tau = d.at("grid_hi_log_tau").get<double>();
    fit.diagnostics.grid_lo_logit_phi = d.at("grid_lo_logit_phi").get<double>();
    fit.diagnostics.grid_hi_logit_phi = d.at("grid_hi_logit_phi").get<double>();
    fit.diagnostics.boundary_mass_max = d.at("boundary_mass_max").get<double>();
    fit.diagnostics.mode_log_tau = d.at("mode_log_tau").get<double>();
    fit.diagnostics.mode_logit_phi = d.at("mode_logit_phi").get<double>();
    fit.diagnostics.mean_deviance = d.at("mean_deviance").get<double>();
    fit.diagnostics.deviance_at_mean = d.at("deviance_at_mean").get<double>();
    fit.diagnostics.dropped_points = d.at("dropped_points").get<std::size_t>();
    if (!fit.beta_marginals.empty()) fit.intercept_mean = fit.beta_marginals[0].mean;
    return fit;
}

namespace {

struct LoadedData {
    CountGrid counts;
    CovariateStack covariates;
    Window window;
    VifReport vif;
    std::vector<std::string> prescreen_dropped;
};

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

LoadedData load_data(const RunConfig& cfg) {
    if (cfg.pattern_path.empty()) throw InputError("no pattern file configured");
    const PointPattern pattern = read_pattern_csv(cfg.pattern_path);

    std::vector<std::string> names;
    std::vector<Raster> rasters;
    for (const auto& path : cfg.covariate_paths) {
        names.push_back(stem_of(path));
        rasters.push_back(read_raster_csv(path));
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t k = i + 1; k < names.size(); ++k)
            if (names[i] == names[k])
                throw InputError("duplicate covariate name '" + names[i] +
                                 "' (rename one of the raster files)");

    Window window;
    if (!rasters.empty()) {
        window = rasters[0].window;
        if (cfg.nrow > 0 && (cfg.nrow != window.nrow || cfg.ncol != window.ncol))
            throw InputError("configured grid " + std::to_string(cfg.nrow) + "x" +
                             std::to_string(cfg.ncol) + " does not match the covariate rasters (" +
                             std::to_string(window.nrow) + "x" + std::to_string(window.ncol) + ")");
    } else {
        if (cfg.nrow < 1 || cfg.ncol < 1)
            throw InputError("nrow and ncol are required when no covariate rasters are given");
        if (!cfg.have_window)
            throw InputError("an observation window is required when no covariate rasters are given");
        window = cfg.window();
    }
    window.validate();

    LoadedData data;
    data.window = window;
    data.counts = grid_counts(pattern, window);

    if (!rasters.empty()) {
        CovariateStack raw = stack_rasters(names, rasters, window);
        std::vector<int> flags(names.size(), 0);
        for (const auto& name : cfg.log_covariates) {
            const int col = raw.column_of(name);
            if (col < 0)
                throw InputError("log_transform names unknown covariate '" + name + "'");
            flags[static_cast<std::size_t>(col)] = 1;
        }
        CovariateStack processed = preprocess_covariates(raw, flags);
        if (cfg.vif_threshold > 0.0 && processed.p() > 1) {
            data.vif = vif_filter(processed, cfg.vif_threshold);
            processed = select_covariates(processed, data.vif.kept);
        } else {
            data.vif.kept = processed.names;
            data.vif.vif.assign(processed.names.size(), 1.0);
        }
        data.covariates = processed;
    } else {
        data.covariates.values.resize(window.cells(), 0);
        data.covariates.standardized = true;
    }
    return data;
}

ModelSpec make_field_spec(const RunConfig& cfg, const LoadedData& data, double u_sigma, bool rsr,
                          bool keep_basis = false) {
    const StructureMatrix R = build_rw2d(data.window.nrow, data.window.ncol);
    const GvMethod method = parse_gv_method(cfg.gv_method);
    ModelSpec spec;
    spec.counts = data.counts;
    spec.covariates = data.covariates;
    spec.prec = scale_to_unit_gv(R, method, 6000, keep_basis);
    spec.prec_prior = pc_prec_prior(u_sigma, cfg.alpha_sigma);
    const GvMethod mix_method =
        spec.prec.base_spectrum.size() > 0 ? GvMethod::exact : GvMethod::torus;
    spec.mix_prior = pc_mix_prior(cfg.u_phi, cfg.alpha_phi, spec.prec, 512, mix_method);
    spec.rsr = rsr;
    spec.unit_exposure = cfg.unit_exposure;
    return spec;
}

FitOptions make_fit_options(const RunConfig& cfg, int workers) {
    FitOptions opts;
    opts.grid_n_tau = cfg.grid_n;
    opts.grid_n_phi = cfg.grid_n;
    opts.grid_span_sd = cfg.grid_span;
    opts.compute_dic = cfg.compute_dic;
    opts.workers = workers;
    return opts;
}

void write_surface_files(const std::string& out_dir, const std::string& tag, const Window& window,
                         const FitResult& fit) {
    const struct {
        const char* name;
        const Eigen::VectorXd* values;
    } surfaces[] = {
        {"fixed", &fit.fixed_surface},
        {"structured", &fit.structured_surface},
        {"error", &fit.error_surface},
        {"predictor", &fit.predictor_surface},
    };
    for (const auto& s : surfaces) {
        Raster raster{window, *s.values};
        const std::string base = out_dir + "/surface_" + s.name + (tag.empty() ? "" : "_" + tag);
        write_raster_csv(base + ".csv", raster);
        write_heatmap_png(base + ".png", *s.values, window.nrow, window.ncol);
    }
}

void write_interval_table(const std::string& path, const std::vector<double>& u_values,
                          const std::vector<FitResult>& fits) {
    std::ostringstream out;
    out << "u_sigma,coefficient,mean,sd,lo,hi\n";
    for (std::size_t i = 0; i < fits.size(); ++i)
        for (std::size_t jx = 0; jx < fits[i].beta_marginals.size(); ++jx) {
            const MarginalSummary& m = fits[i].beta_marginals[jx];
            out << format_double(u_values[i]) << "," << fits[i].coef_names[jx] << ","
                << format_double(m.mean) << "," << format_double(m.sd) << ","
                << format_double(m.lo) << "," << format_double(m.hi) << "\n";
        }
    write_text(path, out.str());
}

void write_interval_png(const std::string& path, const std::vector<double>& u_values,
                        const std::vector<FitResult>& fits) {
    // CI bounds per coefficient against log10(U_sigma)
    const std::uint8_t palette[][3] = {{31, 119, 180}, {214, 39, 40},  {44, 160, 44},
                                       {148, 103, 189}, {255, 127, 14}, {140, 86, 75}};
    std::vector<Curve> curves;
    if (fits.empty()) return;
    const std::size_t ncoef = fits[0].beta_marginals.size();
    for (std::size_t jx = 0; jx < ncoef; ++jx) {
        const auto* color = palette[jx % 6];
        Curve mean, lo, hi;
        mean.r = lo.r = hi.r = color[0];
        mean.g = lo.g = hi.g = color[1];
        mean.b = lo.b = hi.b = color[2];
        for (std::size_t i = 0; i < fits.size(); ++i) {
            const double x = std::log10(u_values[i]);
            mean.x.push_back(x);
            mean.y.push_back(fits[i].beta_marginals[jx].mean);
            lo.x.push_back(x);
            lo.y.push_back(fits[i].beta_marginals[jx].lo);
            hi.x.push_back(x);
            hi.y.push_back(fits[i].beta_marginals[jx].hi);
        }
        curves.push_back(std::move(mean));
        curves.push_back(std::move(lo));
        curves.push_back(std::move(hi));
    }
    write_curves_png(path, curves);
}

void write_hyper_summary(const std::string& path, const std::vector<double>& u_values,
                         const std::vector<FitResult>& fits) {
    std::ostringstream out;
    out << "u_sigma,sigma_mean,sigma_lo,sigma_hi,phi_mean,phi_lo,phi_hi,dic\n";
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const FitResult& f = fits[i];
        out << format_double(u_values[i]) << "," << format_double(f.sigma_marginal.mean) << ","
            << format_double(f.sigma_marginal.lo) << "," << format_double(f.sigma_marginal.hi)
            << "," << format_double(f.phi_marginal.mean) << "," << format_double(f.phi_marginal.lo)
            << "," << format_double(f.phi_marginal.hi) << "," << format_double(f.dic) << "\n";
    }
    write_text(path, out.str());
}

json data_json(const LoadedData& data) {
    json j;
    j["cells"] = data.counts.n();
    j["points"] = data.counts.total();
    j["dropped_points"] = data.counts.dropped;
    j["covariates_kept"] = data.vif.kept;
    j["vif"] = data.vif.vif;
    j["covariates_removed"] = data.vif.removed;
    j["prescreen_dropped"] = data.prescreen_dropped;
    return j;
}

int cmd_fit(RunConfig cfg, bool rsr) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    LoadedData data = load_data(cfg);

    if (cfg.glm_prescreen && data.covariates.p() > 0) {
        ModelSpec glm_spec;
        glm_spec.counts = data.counts;
        glm_spec.covariates = data.covariates;
        glm_spec.unit_exposure = cfg.unit_exposure;
        FitOptions glm_opts;
        glm_opts.compute_dic = false;
        const FitResult screen = glm_fit(glm_spec, glm_opts);
        std::vector<std::string> keep;
        for (int j = 0; j < data.covariates.p(); ++j) {
            const MarginalSummary& m = screen.beta_marginals[static_cast<std::size_t>(j + 1)];
            const double z = m.sd > 0.0 ? std::abs(m.mean / m.sd) : 0.0;
            if (z >= 1.959963984540054)
                keep.push_back(data.covariates.names[static_cast<std::size_t>(j)]);
            else
                data.prescreen_dropped.push_back(data.covariates.names[static_cast<std::size_t>(j)]);
        }
        data.covariates = select_covariates(data.covariates, keep);
    }

    // shared across the sweep: the scaled structure and the phi prior do not
    // depend on U_sigma
    ModelSpec base_spec = make_field_spec(cfg, data, cfg.u_sigma[0], rsr);

    const int workers = resolve_workers(cfg.workers);
    const std::size_t n_u = cfg.u_sigma.size();
    const int outer = static_cast<int>(std::min<std::size_t>(workers, n_u));
    const int inner = outer > 1 ? 1 : workers;

    std::vector<FitResult> fits(n_u);
    parallel_for(static_cast<int>(n_u), outer, [&](int i) {
        ModelSpec spec = base_spec;
        spec.prec_prior = pc_prec_prior(cfg.u_sigma[static_cast<std::size_t>(i)], cfg.alpha_sigma);
        fits[static_cast<std::size_t>(i)] = fit(spec, make_fit_options(cfg, inner));
    });

    const json echo = config_json(cfg);
    json meta;
    meta["config"] = echo;
    meta["data"] = data_json(data);
    meta["scaling"] = json::parse(scale_diagnostic_json(base_spec.prec));
    meta["phi_prior"] = json{{"theta", base_spec.mix_prior.theta},
                             {"d_one", base_spec.mix_prior.d_one},
                             {"table_mass", base_spec.mix_prior.table_mass()}};
    write_json_file(cfg.out_dir + "/config.json", meta);

    for (std::size_t i = 0; i < n_u; ++i) {
        decompose(fits[i]);  // surface identity check before anything is written
        json j = fit_result_json(fits[i]);
        j["u_sigma"] = cfg.u_sigma[i];
        j["config"] = echo;
        const std::string tag = "Usigma_" + format_compact(cfg.u_sigma[i]);
        write_json_file(cfg.out_dir + "/fit_" + tag + ".json", j);
        write_surface_files(cfg.out_dir, tag, data.window, fits[i]);
    }
    write_interval_table(cfg.out_dir + "/credible_intervals.csv", cfg.u_sigma, fits);
    write_interval_png(cfg.out_dir + "/credible_intervals.png", cfg.u_sigma, fits);
    write_hyper_summary(cfg.out_dir + "/hyper_summary.csv", cfg.u_sigma, fits);
    return 0;
}

int cmd_glm(RunConfig cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const LoadedData data = load_data(cfg);

    ModelSpec spec;
    spec.counts = data.counts;
    spec.covariates = data.covariates;
    spec.unit_exposure = cfg.unit_exposure;
    FitOptions opts;
    opts.compute_dic = cfg.compute_dic;
    const FitResult result = glm_fit(spec, opts);

    json j = fit_result_json(result);
    j["config"] = config_json(cfg);
    j["data"] = data_json(data);
    write_json_file(cfg.out_dir + "/fit_glm.json", j);
    write_interval_table(cfg.out_dir + "/credible_intervals.csv", {0.0}, {result});
    {
        Raster raster{data.window, result.predictor_surface};
        write_raster_csv(cfg.out_dir + "/surface_predictor.csv", raster);
        write_heatmap_png(cfg.out_dir + "/surface_predictor.png", result.predictor_surface,
                          data.window.nrow, data.window.ncol);
    }
    return 0;
}

int cmd_simulate(RunConfig cfg) {
    cfg.mode = "simulate";
    cfg.validate();
    fs::create_directories(cfg.out_dir);

    std::vector<std::string> names;
    std::vector<Raster> rasters;
    for (const auto& path : cfg.covariate_paths) {
        names.push_back(stem_of(path));
        rasters.push_back(read_raster_csv(path));
    }
    Window window;
    if (!rasters.empty()) {
        window = rasters[0].window;
    } else {
        if (cfg.nrow < 1 || cfg.ncol < 1 || !cfg.have_window)
            throw InputError("simulate needs covariate rasters or an explicit window and grid");
        window = cfg.window();
    }
    window.validate();

    LoadedData data;
    data.window = window;
    data.counts.window = window;
    data.counts.counts.assign(static_cast<std::size_t>(window.cells()), 0);
    data.counts.areas = Eigen::VectorXd::Constant(window.cells(), window.cell_area());
    if (!rasters.empty()) {
        CovariateStack raw = stack_rasters(names, rasters, window);
        std::vector<int> flags(names.size(), 0);
        for (const auto& name : cfg.log_covariates) {
            const int col = raw.column_of(name);
            if (col < 0) throw InputError("log_transform names unknown covariate '" + name + "'");
            flags[static_cast<std::size_t>(col)] = 1;
        }
        data.covariates = preprocess_covariates(raw, flags);
    } else {
        data.covariates.values.resize(window.cells(), 0);
        data.covariates.standardized = true;
    }

    if (static_cast<int>(cfg.true_beta.size()) != data.covariates.p())
        throw InputError("true_beta has " + std::to_string(cfg.true_beta.size()) +
                         " entries but there are " + std::to_string(data.covariates.p()) +
                         " covariates");

    ModelSpec spec = make_field_spec(cfg, data, cfg.u_sigma[0], false, true);
    const Hyperparameters hyper{cfg.true_tau, cfg.true_phi};
    hyper.validate();
    const SimulationResult sim =
        simulate(spec, hyper, cfg.true_beta0, from_std(cfg.true_beta), cfg.seed);

    // uniform point placement inside each cell, separate stream from the
    // field draw
    PointPattern pattern;
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int row = 0; row < window.nrow; ++row)
        for (int col = 0; col < window.ncol; ++col) {
            const long k = sim.counts.counts[static_cast<std::size_t>(row) * window.ncol + col];
            for (long q = 0; q < k; ++q) {
                pattern.x.push_back(window.xmin + (col + rng.uniform()) * window.dx());
                pattern.y.push_back(window.ymin + (row + rng.uniform()) * window.dy());
            }
        }
    write_pattern_csv(cfg.out_dir + "/pattern.csv", pattern);

    Eigen::VectorXd counts_d(window.cells());
    for (int i = 0; i < window.cells(); ++i)
        counts_d[i] = static_cast<double>(sim.counts.counts[static_cast<std::size_t>(i)]);
    write_raster_csv(cfg.out_dir + "/counts.csv", Raster{window, counts_d});
    write_raster_csv(cfg.out_dir + "/eta_true.csv", Raster{window, sim.eta});
    write_heatmap_png(cfg.out_dir + "/eta_true.png", sim.eta, window.nrow, window.ncol);

    json truth;
    truth["beta0"] = cfg.true_beta0;
    truth["beta"] = cfg.true_beta;
    truth["tau"] = cfg.true_tau;
    truth["phi"] = cfg.true_phi;
    truth["seed"] = cfg.seed;
    truth["n_points"] = sim.counts.total();
    truth["config"] = config_json(cfg);
    write_json_file(cfg.out_dir + "/truth.json", truth);
    return 0;
}

int cmd_prior(RunConfig cfg) {
    cfg.mode = "prior";
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const int nrow = cfg.nrow > 0 ? cfg.nrow : 10;
    const int ncol = cfg.ncol > 0 ? cfg.ncol : 10;

    const PcPrecPrior prec_prior = pc_prec_prior(cfg.u_sigma[0], cfg.alpha_sigma);
    const StructureMatrix R = build_rw2d(nrow, ncol);
    const ScaledPrecision prec = scale_to_unit_gv(R, parse_gv_method(cfg.gv_method));
    const GvMethod mix_method = prec.base_spectrum.size() > 0 ? GvMethod::exact : GvMethod::torus;
    const PcMixPrior mix = pc_mix_prior(cfg.u_phi, cfg.alpha_phi, prec, 512, mix_method);

    const int npts = 513;
    {
        std::ostringstream out;
        out << "sigma,density\n";
        const double hi = prec_prior.quantile_sigma(0.999);
        for (int i = 0; i < npts; ++i) {
            const double s = hi * i / (npts - 1);
            out << format_double(s) << "," << format_double(prec_prior.density_sigma(s)) << "\n";
        }
        write_text(cfg.out_dir + "/prior_sigma.csv", out.str());
    }
    {
        std::ostringstream out;
        out << "tau,density\n";
        const double t_lo = std::pow(prec_prior.quantile_sigma(0.999), -2.0);
        const double t_hi = std::pow(prec_prior.quantile_sigma(0.01), -2.0);
        for (int i = 0; i < npts; ++i) {
            const double t = t_lo * std::pow(t_hi / t_lo, static_cast<double>(i) / (npts - 1));
            out << format_double(t) << "," << format_double(prec_prior.density_tau(t)) << "\n";
        }
        write_text(cfg.out_dir + "/prior_tau.csv", out.str());
    }
    Curve phi_curve;
    {
        std::ostringstream out;
        out << "phi,density\n";
        for (std::size_t i = 0; i < mix.logit_knots.size(); ++i) {
            const double t = mix.logit_knots[i];
            const double phi = 1.0 / (1.0 + std::exp(-t));
            const double dens = mix.density_logit(t) / (phi * (1.0 - phi));
            out << format_double(phi) << "," << format_double(dens) << "\n";
            phi_curve.x.push_back(phi);
            phi_curve.y.push_back(dens);
        }
        write_text(cfg.out_dir + "/prior_phi.csv", out.str());
    }
    {
        Curve sigma_curve;
        sigma_curve.r = 214;
        sigma_curve.g = 39;
        sigma_curve.b = 40;
        const double hi = prec_prior.quantile_sigma(0.999);
        for (int i = 0; i < npts; ++i) {
            const double s = hi * i / (npts - 1);
            sigma_curve.x.push_back(s / hi);
            sigma_curve.y.push_back(prec_prior.density_sigma(s) / prec_prior.density_sigma(0.0));
        }
        // both curves normalized onto the unit square so one frame holds them
        Curve phi_norm = phi_curve;
        double dmax = 0.0;
        for (double d : phi_norm.y) dmax = std::max(dmax, d);
        for (double& d : phi_norm.y) d /= dmax > 0.0 ? dmax : 1.0;
        write_curves_png(cfg.out_dir + "/prior_curves.png", {sigma_curve, phi_norm});
    }

    json j;
    j["config"] = config_json(cfg);
    j["lattice"] = {nrow, ncol};
    j["lambda"] = prec_prior.lambda;
    j["sigma_mass_above_U"] = prec_prior_mass_above(prec_prior, cfg.u_sigma[0]);
    j["expected_sigma_fraction"] = expected_sigma_fraction(prec_prior);
    j["sigma_fraction_heuristic"] = sigma_fraction_heuristic;
    j["theta"] = mix.theta;
    j["d_one"] = mix.d_one;
    j["phi_table_mass"] = mix.table_mass();
    j["phi_cdf_at_U"] = mix.cdf_phi(cfg.u_phi);
    j["phi_method"] = gv_method_name(mix.method);
    write_json_file(cfg.out_dir + "/prior.json", j);
    return 0;
}

int cmd_scale_check(RunConfig cfg) {
    cfg.mode = "scale-check";
    cfg.validate();
    if (cfg.nrow < 3 || cfg.ncol < 3)
        throw InputError("scale-check needs nrow and ncol of at least 3");
    fs::create_directories(cfg.out_dir);
    const GvMethod method = parse_gv_method(cfg.gv_method);

    json j;
    double gv_base = 0.0, gv_fine = 0.0;
    for (int pass = 0; pass < 2; ++pass) {
        const int nrow = pass == 0 ? cfg.nrow : 2 * cfg.nrow;
        const int ncol = pass == 0 ? cfg.ncol : 2 * cfg.ncol;
        const StructureMatrix R = build_rw2d(nrow, ncol);
        json block;
        block["nrow"] = nrow;
        block["ncol"] = ncol;
        block["n"] = nrow * ncol;

        const GvResult torus = generalized_variance(R, GvMethod::torus);
        block["gv_torus"] = torus.gv;
        if (static_cast<long>(nrow) * ncol <= 6000) {
            const GvResult exact = generalized_variance(R, GvMethod::exact);
            block["gv_exact"] = exact.gv;
            block["torus_gap_rel"] = std::abs(torus.gv - exact.gv) / exact.gv;
            block["rank_deficiency"] = exact.rank_deficiency;
        }

        const ScaledPrecision prec = scale_to_unit_gv(R, method);
        block["method"] = gv_method_name(prec.method);
        block["scale_factor"] = prec.scale_factor;
        block["gv_before"] = prec.gv_before;
        {
            StructureMatrix scaled = R;
            scaled.entries = prec.scaled;
            const GvResult after = generalized_variance(scaled, prec.method);
            block["gv_after"] = after.gv;
        }
        if (pass == 0) {
            gv_base = prec.gv_before;
            j["base"] = block;
            if (cfg.ginv_csv) {
                Window w = cfg.have_window ? cfg.window() : Window{0.0, 1.0, 0.0, 1.0, nrow, ncol};
                w.nrow = nrow;
                w.ncol = ncol;
                write_raster_csv(cfg.out_dir + "/ginv_diag.csv", Raster{w, prec.ginv_diag});
            }
        } else {
            gv_fine = prec.gv_before;
            j["refined"] = block;
        }
    }
    j["ratio"] = gv_fine / gv_base;
    j["k_squared"] = 4.0;
    j["config"] = config_json(cfg);
    write_json_file(cfg.out_dir + "/scale_check.json", j);
    return 0;
}

void emit_error(const RunConfig& cfg, const std::string& type, const std::string& message) {
    std::cerr << "error (" << type << "): " << message << "\n";
    try {
        fs::create_directories(cfg.out_dir);
        write_json_file(cfg.out_dir + "/error.json",
                        json{{"error", {{"type", type}, {"message", message}}}});
    } catch (const std::exception&) {
        // the error report is best-effort; the exit code carries the state
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    RunConfig cfg;

    // the config file is applied first so explicit flags win
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            try {
                cfg = read_config_file(args[i + 1]);
            } catch (const InputError& e) {
                emit_error(cfg, "input", e.what());
                return 2;
            }
        } else if (args[i].rfind("--config=", 0) == 0) {
            try {
                cfg = read_config_file(args[i].substr(9));
            } catch (const InputError& e) {
                emit_error(cfg, "input", e.what());
                return 2;
            }
        }
    }

    CLI::App app{"Discretized log-Gaussian Cox process fitting on lattices"};
    app.require_subcommand(1);
    std::string config_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--out", cfg.out_dir, "output directory");
        sub->add_option("--seed", cfg.seed, "random seed");
        sub->add_option("--workers", cfg.workers, "worker threads (0: LGCP_WORKERS env or 1)");
        sub->add_option("--nrow", cfg.nrow, "grid rows");
        sub->add_option("--ncol", cfg.ncol, "grid columns");
        sub->add_option("--gv-method", cfg.gv_method, "generalized-variance method: exact|torus|auto");
        sub->add_option_function<std::vector<double>>(
            "--window",
            [&](const std::vector<double>& w) {
                if (w.size() != 4) throw CLI::ValidationError("--window needs xmin xmax ymin ymax");
                cfg.xmin = w[0];
                cfg.xmax = w[1];
                cfg.ymin = w[2];
                cfg.ymax = w[3];
                cfg.have_window = true;
            },
            "window as xmin xmax ymin ymax")
            ->expected(4);
    };
    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--pattern", cfg.pattern_path, "point pattern CSV");
        sub->add_option("--covariate", cfg.covariate_paths, "covariate raster CSV (repeatable)");
        sub->add_option("--log", cfg.log_covariates, "covariate names to log-transform");
        sub->add_option("--vif-threshold", cfg.vif_threshold, "VIF cutoff, <=0 disables");
        sub->add_flag("--unit-exposure", cfg.unit_exposure, "exposure 1 instead of cell areas");
    };
    auto add_priors = [&](CLI::App* sub) {
        sub->add_option("--u-sigma", cfg.u_sigma, "U_sigma sweep values");
        sub->add_option("--alpha-sigma", cfg.alpha_sigma, "P(sigma > U_sigma)");
        sub->add_option("--u-phi", cfg.u_phi, "U_phi");
        sub->add_option("--alpha-phi", cfg.alpha_phi, "P(phi < U_phi)");
    };
    auto add_inference = [&](CLI::App* sub) {
        sub->add_option("--grid-n", cfg.grid_n, "hyper grid nodes per axis");
        sub->add_option("--grid-span", cfg.grid_span, "hyper grid half-width in posterior sd");
        sub->add_flag("--glm-prescreen", cfg.glm_prescreen, "drop slopes with GLM |z| < 1.96");
        sub->add_flag_callback("--no-dic", [&]() { cfg.compute_dic = false; },
                               "skip the DIC computation");
    };

    CLI::App* sub_fit = app.add_subcommand("fit", "U_sigma sweep of full LGCP fits");
    add_common(sub_fit);
    add_data(sub_fit);
    add_priors(sub_fit);
    add_inference(sub_fit);
    CLI::App* sub_rsr = app.add_subcommand("rsr", "sweep with the field restricted to the covariate complement");
    add_common(sub_rsr);
    add_data(sub_rsr);
    add_priors(sub_rsr);
    add_inference(sub_rsr);
    CLI::App* sub_glm = app.add_subcommand("glm", "Poisson regression without the random field");
    add_common(sub_glm);
    add_data(sub_glm);
    sub_glm->add_flag_callback("--no-dic", [&]() { cfg.compute_dic = false; },
                               "skip the DIC computation");
    CLI::App* sub_sim = app.add_subcommand("simulate", "draw counts and points from known parameters");
    add_common(sub_sim);
    sub_sim->add_option("--covariate", cfg.covariate_paths, "covariate raster CSV (repeatable)");
    sub_sim->add_option("--log", cfg.log_covariates, "covariate names to log-transform");
    sub_sim->add_option("--beta0", cfg.true_beta0, "true intercept");
    sub_sim->add_option("--beta", cfg.true_beta, "true slopes");
    sub_sim->add_option("--tau", cfg.true_tau, "true precision");
    sub_sim->add_option("--phi", cfg.true_phi, "true mixing weight");
    CLI::App* sub_prior = app.add_subcommand("prior", "prior density tables and plots");
    add_common(sub_prior);
    add_priors(sub_prior);
    CLI::App* sub_scale = app.add_subcommand("scale-check", "scaling diagnostics at 1x and 2x resolution");
    add_common(sub_scale);
    sub_scale->add_flag("--ginv-csv", cfg.ginv_csv, "write the marginal variance raster");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sub_fit->parsed()) {
            cfg.mode = "fit";
            return cmd_fit(cfg, false);
        }
        if (sub_rsr->parsed()) {
            cfg.mode = "rsr";
            return cmd_fit(cfg, true);
        }
        if (sub_glm->parsed()) {
            cfg.mode = "glm";
            return cmd_glm(cfg);
        }
        if (sub_sim->parsed()) return cmd_simulate(cfg);
        if (sub_prior->parsed()) return cmd_prior(cfg);
        if (sub_scale->parsed()) return cmd_scale_check(cfg);
        emit_error(cfg, "input", "no subcommand given");
        return 2;
    } catch (const InputError& e) {
        emit_error(cfg, "input", e.what());
        return 2;
    } catch (const NumericalError& e) {
        emit_error(cfg, "numerical", e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error(cfg, "numerical", e.what());
        return 1;
    }
}

}
