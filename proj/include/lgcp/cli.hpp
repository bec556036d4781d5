#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgcp/inference.hpp"

namespace lgcp {

// Resolved batch configuration. A run is described by a key=value config
// file, command-line flags override individual keys.
struct RunConfig {
    std::string mode = "fit";
    std::string pattern_path;
    std::vector<std::string> covariate_paths;
    std::vector<std::string> log_covariates;  // names log-transformed before standardizing
    std::string out_dir = "out";
    int nrow = 0, ncol = 0;
    bool have_window = false;
    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
    std::vector<double> u_sigma = {0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
    double alpha_sigma = 0.01;
    double u_phi = 0.5;
    double alpha_phi = 2.0 / 3.0;
    double vif_threshold = 10.0;  // <= 0 disables the VIF pass
    bool glm_prescreen = false;
    bool unit_exposure = false;
    std::string gv_method = "auto";  // exact | torus | auto
    int grid_n = 9;
    double grid_span = 3.0;
    bool compute_dic = true;
    int workers = 0;
    std::uint64_t seed = 1;
    // simulate mode
    double true_beta0 = 0.0;
    std::vector<double> true_beta;
    double true_tau = 4.0;
    double true_phi = 0.7;
    // scale-check mode
    bool ginv_csv = false;

    Window window() const;
    void validate() const;
};

RunConfig read_config_file(const std::string& path);
nlohmann::json config_json(const RunConfig& cfg);

GvMethod parse_gv_method(const std::string& name);

nlohmann::json fit_result_json(const FitResult& fit);
FitResult fit_result_from_json(const nlohmann::json& j);

// Front-end entry point; returns the process exit code
// (0 success, 1 numerical failure, 2 input error).
int run_cli(const std::vector<std::string>& args);

}
