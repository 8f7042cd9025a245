#pragma once

#include <cstdint>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/model.hpp"
#include "jbsde/solver.hpp"

namespace jbsde::reference {

/// Monomials in x up to a total degree, one basis shared by every step.
class RegressionBasis {
public:
    RegressionBasis(int dim, int degree);
    int dim() const { return dim_; }
    int degree() const { return degree_; }
    int size() const { return static_cast<int>(exponents_.size()); }
    void eval(const double* x, double* out) const;

private:
    int dim_;
    int degree_;
    std::vector<std::vector<int>> exponents_;
};

struct StepRegression {
    Vec coef_y;    // P
    Mat coef_z;    // d x P
    Vec coef_psi;  // P
    double condition = 1.0;
    bool ridge_flagged = false;
    double residual_y = 0.0;  // in-sample mean squared residual of the Y_{n+1} fit
};

struct BackwardSolution {
    solver::TimeGrid grid;
    std::vector<StepRegression> steps;  // n = 0..M-1
    std::vector<double> Y;              // B x (M+1), Y[.,M] = g(X_M)
    std::vector<double> Z;              // B x M x d
    std::vector<double> Psi;            // B x M

    /// Y_0 is deterministic (all paths start at x0).
    double y0() const { return Y.empty() ? 0.0 : Y[0]; }
};

struct BackwardOptions {
    int picard_max = 50;
    double picard_tol = 1e-10;
    double ridge = 1e-10;
    double cond_threshold = 1e12;
};

/// Backward loop n = M-1..0: least-squares conditional expectations of
/// Y_{n+1}, Y_{n+1} dW_n / dt and Y_{n+1} dN~_n / dt on basis(X_n), then the
/// implicit driver equation solved pathwise by Picard iteration (contraction
/// for dt K_f < 1).
BackwardSolution solve_backward(const model::FbsdeProblem& problem, const solver::TimeGrid& grid,
                                const solver::PathBatch& batch, const RegressionBasis& basis,
                                const BackwardOptions& opts = {});

/// Pointers into per-path arrays of one discrete solution on a common batch.
/// X may be null, meaning the batch states themselves.
struct DiscreteSolutionView {
    const double* X = nullptr;    // B x (M+1) x d
    const double* Y = nullptr;    // B x (M+1)
    const double* Z = nullptr;    // B x M x d
    const double* Psi = nullptr;  // B x M
};

struct ErrorFunctional {
    double errX = 0.0;    // max_n mean |X1_n - X2_n|^2
    double errY = 0.0;    // max_n mean |Y1_n - Y2_n|^2
    double errZ = 0.0;    // sum_n dt mean |Z1_n - Z2_n|^2
    double errPsi = 0.0;  // sum_n dt mean |Psi1_n - Psi2_n|^2
};

ErrorFunctional error_functional(const DiscreteSolutionView& a, const DiscreteSolutionView& b,
                                 const solver::PathBatch& batch, const solver::TimeGrid& grid);

/// Exact (Y, Z, Psi) of a manufactured solution along the batch paths.
/// The problem must be the one the batch was simulated from (its measure
/// supplies the Psi quadrature nodes).
struct ExactOnBatch {
    std::vector<double> Y;    // B x (M+1)
    std::vector<double> Z;    // B x M x d
    std::vector<double> Psi;  // B x M
    DiscreteSolutionView view() const { return {nullptr, Y.data(), Z.data(), Psi.data()}; }
};

ExactOnBatch exact_on_batch(const model::ManufacturedSolution& ms,
                            const model::FbsdeProblem& sim_problem,
                            const solver::PathBatch& batch, const solver::TimeGrid& grid);

/// Interval averages (1/dt) integral of Z_s ds and of Psi_s ds from the
/// closed forms, evaluated along a fine sub-grid simulation (subfactor
/// sub-steps per interval), together with their regression-conditional
/// versions on basis(X_n). The returned coarse batch is built from the
/// aggregated fine increments and is what downstream rollouts should use.
struct TildeTildeResult {
    solver::PathBatch coarse;
    std::vector<double> z_avg;     // B x M x d
    std::vector<double> psi_avg;   // B x M
    std::vector<double> z_cond;    // B x M x d
    std::vector<double> psi_cond;  // B x M
};

TildeTildeResult tilde_tilde(const model::ManufacturedSolution& ms,
                             const model::FbsdeProblem& sim_problem, const solver::TimeGrid& grid,
                             int B, uint64_t master_seed, const RegressionBasis& basis,
                             int subfactor = 4);

}  // namespace jbsde::reference
