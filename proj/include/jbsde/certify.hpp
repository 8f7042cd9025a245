#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/model.hpp"
#include "jbsde/nets.hpp"
#include "jbsde/reference.hpp"
#include "jbsde/solver.hpp"

namespace jbsde::certify {

struct InfeasibleError : JbsdeError {
    explicit InfeasibleError(const std::string& what) : JbsdeError(what) {}
};

/// Feasible range for lambda^2 given the driver Lipschitz constant, the jump
/// mass and the step size. Infeasibility is a value, not an error.
struct LambdaInterval {
    bool feasible = false;
    double lambda_sq_min = 0.0;
    double lambda_sq_max = 0.0;
};

LambdaInterval lambda_feasible_interval(double K_f, double K_nu, double dt);

/// F1 = -ln(1 - dt K_f (c lambda^2 + 1/lambda^2)) / dt. The quadratic
/// coefficient c defaults to 3; 4 selects the alternative convention and is
/// kept behind the flag for comparison.
double f1(double lambda_sq, double K_f, double dt, int coefficient = 3);

/// dt -> 0 limit K_f (c lambda^2 + 1/lambda^2).
double f1_limit(double lambda_sq, double K_f, int coefficient = 3);

/// C(lambda, lambdabar) = 2 (1 + 1/lambdabar) exp(F1bar T)
///   * [1 + (1 + T K_f (c l2 + 1/l2)) / ((1 min 1/K_nu) - K_f / l2)]
/// with F1bar = K_f (c l2 + 1/l2) + lambdabar. Requires l2 > (1 max K_nu) K_f.
double posteriori_constant(double lambda_sq, double lambdabar, double K_f, double K_nu, double T,
                           int coefficient = 3);

/// Truncated variant: K_nu replaced by the big-jump mass.
double epsilon_constant(double lambda_sq, double lambdabar, double K_f, double K_nu_eps, double T,
                        int coefficient = 3);

struct PosterioriMin {
    double lambda_sq = 0.0;
    double lambdabar = 0.0;
    double constant = 0.0;
};

/// Deterministic log-grid scan plus golden-section refinement over the
/// feasible lambda^2 range and lambdabar in (0, 10].
PosterioriMin minimize_posteriori(double K_f, double K_nu, double T, double dt,
                                  int coefficient = 3, int grid_points = 64);

/// Inputs of the a priori constants; assemble with bound_inputs().
struct BoundInputs {
    double K_b = 0.0;
    double K_sigma = 0.0;
    double K_gamma = 0.0;
    double K_f = 0.0;
    double K_ft = 0.0;
    double K_g = 0.0;
    double K_nu = 0.0;
    double T = 1.0;
    double second_moment = 0.0;  // integral of |z|^2 nu(dz) over the active measure
    double k_bar() const;        // max of the coefficient constants and the mass
};

/// Constants read off a problem; applied to a truncated problem this yields
/// the epsilon variants (K_sigma_eps, big-jump mass and second moment).
BoundInputs bound_inputs(const model::FbsdeProblem& problem);

/// H(x) = (1+K_g)^2 (1 + 5 K_f^2 / x)
///        * exp(T (x + 5 Kbar^2/x + Kbar^2 max(1/x + 1 + m2, 5/x))).
double apriori_H(double x, const BoundInputs& in);

struct HMin {
    double x = 0.0;
    double value = 0.0;
};

/// Minimum of H over x in [1e-8, 1e3], log-grid scan plus golden section.
HMin minimize_H(const BoundInputs& in, int grid_points = 64);

/// Network approximation error: max over n of
///   E[ integral of (u(t_n, X_n + gamma z) - U_n(X_n + gamma z))^2 nu(dz) ]
///   + K_nu E[ (u(t_n, X_n) - U_n(X_n))^2 ].
double error_rho(const nets::NetFamily& family, const model::ManufacturedSolution& ms,
                 const model::FbsdeProblem& sim_problem, const solver::PathBatch& batch,
                 const solver::TimeGrid& grid);

struct CertificateOptions {
    std::optional<double> lambda_sq_override;
    std::optional<double> lambdabar_override;
    int f1_coefficient = 3;
    std::optional<double> fitted_path_constant;  // empirical C for the O(dt) remainder
    int eval_batch = 65536;
};

/// Evaluated bound: the certified network-dependent term plus uncertified
/// remainders, with every input recorded so the numbers recompute bit-exactly.
struct Certificate {
    bool epsilon_variant = false;
    double epsilon = 0.0;
    double lambda_sq = 0.0;
    double lambdabar = 0.0;
    double f1_value = 0.0;
    double constant = 0.0;       // C(lambda, lambdabar) or the truncated variant
    double loss = 0.0;           // terminal loss estimate
    double loss_ci = 0.0;        // 1.96 * standard error
    double bound_value = 0.0;    // constant * (loss + ci), doubled in the truncated case
    double dt = 0.0;
    double dt_remainder = 0.0;   // fitted_C * dt when a fitted constant is supplied, else 0
    bool dt_remainder_fitted = false;
    double small_jump_remainder = 0.0;  // integral of |z|^2 over the small-jump part
    // inputs for recomputation
    double K_f = 0.0, K_nu = 0.0, T = 0.0;
    int f1_coefficient = 3;
    uint64_t eval_seed = 0;
    int eval_batch = 0;
};

Certificate posteriori_certificate(const nets::NetFamily& family,
                                   const model::FbsdeProblem& problem,
                                   const solver::TimeGrid& grid, uint64_t eval_seed,
                                   const CertificateOptions& opts = {});

Certificate epsilon_certificate(const nets::NetFamily& family,
                                const solver::EpsilonPipeline& pipeline,
                                const solver::TimeGrid& grid, uint64_t eval_seed,
                                const CertificateOptions& opts = {});

std::string certificate_to_json(const Certificate& cert);

struct AprioriOptions {
    double lambda3 = 0.1;
    double lambda4 = 0.1;
    std::optional<double> fitted_path_constant;   // C in the 4 C dt term
    std::optional<double> c_lambda3;              // unquantified factor; symbolic if absent
    bool epsilon_variant = false;                 // (1 + 1/lambda4) instead of (1 + lambda4)
};

/// Assembled right-hand side of the a priori bound, each term separate.
struct AprioriReport {
    double h_bar = 0.0;
    double h_argmin = 0.0;
    double lambda3 = 0.0;
    double lambda4 = 0.0;
    double dt = 0.0;
    double path_term = 0.0;        // 4 C dt (0 when no fitted C)
    bool path_term_fitted = false;
    double z_gap_sum = 0.0;        // dt-weighted sum of E|E[Zdd|X] - Z|^2
    double psi_gap_sum = 0.0;
    double network_term = 0.0;     // 3 Hbar (1+l3) (1+l4) (path + gaps)
    double y0_gap_sq = 0.0;        // |Y_0 - y|^2
    double error_rho = 0.0;
    double remainder_inputs = 0.0;       // y0_gap_sq + dt + error_rho
    std::optional<double> remainder_term;  // (1+K_g)^2 C(l3) * inputs, when C(l3) given
    double total = 0.0;            // network_term (+ remainder_term when numeric)
    double measured_terminal_loss = 0.0;  // on the same batch, for comparison
};

AprioriReport apriori_report(const nets::NetFamily& family, const model::ManufacturedSolution& ms,
                             const model::FbsdeProblem& sim_problem, const solver::TimeGrid& grid,
                             const reference::TildeTildeResult& tt,
                             const AprioriOptions& opts = {});

}  // namespace jbsde::certify
