#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/levy.hpp"
#include "jbsde/model.hpp"
#include "jbsde/solver.hpp"

namespace jbsde::config {

struct MeasureConfig {
    std::string family = "atoms";  // atoms | merton | power
    std::vector<std::pair<Vec, double>> atoms;
    double lambda = 1.0;  // merton
    double delta = 0.5;
    double c = 1.0;  // power
    double alpha = 0.5;
    double z_max = 0.0;  // 0 = family default
    int quad_hint = 64;
};

struct ProblemConfig {
    std::string name = "linear";  // linear | pure_jump_linear | levy_quadratic
    int d = 1;
    double T = 1.0;
    Vec x0;
    Vec alpha;  // linear problems
    double beta0 = 0.0;
    double beta_slope = 1.0;
    double beta_curv = 0.5;
    double kappa = 0.5;
    Vec b;  // constant drift
    double sigma_diag = 0.4;
    double gamma_diag = 1.0;
    MeasureConfig measure;
};

struct CertificateConfig {
    std::optional<double> lambda_sq;
    std::optional<double> lambdabar;
    int f1_coefficient = 3;
    double lambda3 = 0.1;
    double lambda4 = 0.1;
    std::optional<double> fitted_path_constant;
};

struct NetConfig {
    int hidden_width = 0;  // 0 = d + 10
    int hidden_layers = 2;
    std::string activation = "sigmoid";
};

struct ExperimentConfig {
    ProblemConfig problem;
    std::vector<int> M_list{20};
    solver::TrainConfig train;
    NetConfig net;
    int eval_batch = 65536;
    std::vector<double> epsilon_list;
    CertificateConfig certificate;
    int basis_degree = 3;
    std::string output_dir = "run";
    uint64_t seed = 1;
    int threads = 1;
};

/// Strict load: unknown keys anywhere in the file are errors.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);

/// Canonical serialization; excludes output_dir and threads so two runs of
/// the same experiment hash identically regardless of where they write.
std::string canonical_json(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

levy::LevyMeasure build_measure(const MeasureConfig& mc, int dim);
model::ManufacturedSolution build_problem(const ProblemConfig& pc);

}  // namespace jbsde::config
