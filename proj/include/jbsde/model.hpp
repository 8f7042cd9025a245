#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/levy.hpp"

namespace jbsde::model {

/// Driver value together with the partial derivatives the training loop
/// backpropagates through. Only (y, z, psi) matter: the forward state does
/// not depend on the network parameters.
struct DriverPartials {
    double value = 0.0;
    double df_dy = 0.0;
    Vec df_dz;
    double df_dpsi = 0.0;
};

struct Driver {
    std::function<double(double t, const Vec& x, double y, const Vec& z, double psi)> f;
    /// Optional analytic partials; central differences otherwise. When set,
    /// it must fill DriverPartials::value with f as well: the training tape
    /// takes both from one call.
    std::function<DriverPartials(double, const Vec&, double, const Vec&, double)> partials;

    double operator()(double t, const Vec& x, double y, const Vec& z, double psi) const {
        return f(t, x, y, z, psi);
    }
    DriverPartials eval(double t, const Vec& x, double y, const Vec& z, double psi) const;
};

/// Declared Lipschitz/Hoelder constants; verified by sampling, never inferred.
struct ProblemConstants {
    double K_b = 0.0;
    double K_sigma = 0.0;
    double K_gamma = 0.0;
    double K_f = 0.0;
    double K_ft = 0.0;
    double K_g = 0.0;
};

struct FbsdeProblem {
    int d = 1;
    double T = 1.0;
    Vec x0;
    std::function<Vec(const Vec&)> b;
    std::function<Mat(const Vec&)> sigma;
    std::function<Mat(const Vec&)> gamma;
    Driver driver;
    std::function<double(const Vec&)> g;
    levy::LevyMeasure measure;
    ProblemConstants constants;
};

struct ExactTriple {
    double y = 0.0;
    Vec z;
    double psi = 0.0;
};

/// A problem whose driver was built so that a chosen u solves the PIDE,
/// giving closed-form references for (Y, Z, Psi) along any path.
struct ManufacturedSolution {
    FbsdeProblem problem;
    std::function<double(double, const Vec&)> u;
    std::function<Vec(double, const Vec&)> grad_u;
    /// Bound for |u| and |grad u| relative to 1+|x| on the validation box.
    double growth_K = 0.0;

    ExactTriple exact_triple(double t, const Vec& x) const;
};

/// u_t + L u + f(t, x, u, sigma^T grad u, J u) at one point; derivatives of u
/// in t and the Hessian come from central differences of u and grad_u.
double pide_residual(const ManufacturedSolution& ms, double t, const Vec& x);

struct ValidationCheck {
    std::string name;
    bool pass = false;
    double worst_ratio = 0.0;  // worst sampled ratio against the declared constant
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

struct ValidateOptions {
    double box_halfwidth = 5.0;
    int pair_samples = 10000;
    int residual_samples = 1000;
    double residual_tol = 1e-6;
    uint64_t seed = 0x76616c6964ull;
};

/// Sampled Lipschitz/Hoelder checks against the declared constants.
ValidationReport validate(const FbsdeProblem& problem, const ValidateOptions& opts = {});

/// Adds the PIDE-residual and growth checks to the coefficient checks.
ValidationReport validate(const ManufacturedSolution& ms, const ValidateOptions& opts = {});

/// Coefficients and measure of a problem whose driver is still open.
struct ProblemSkeleton {
    int d = 1;
    double T = 1.0;
    Vec x0;
    std::function<Vec(const Vec&)> b;
    std::function<Mat(const Vec&)> sigma;
    std::function<Mat(const Vec&)> gamma;
    levy::LevyMeasure measure;
    double K_b = 0.0;
    double K_sigma = 0.0;
    double K_gamma = 0.0;
};

/// u(t,x) = alpha.x + beta(t) with beta(t) = beta0 + slope (T-t) + curv (T-t)^2.
/// The driver is f = -beta'(t) - alpha.b(x) + kappa (y - u(t,x)); kappa > 0
/// exercises the y-dependence of the driver.
ManufacturedSolution make_linear_manufactured(const Vec& alpha, double beta0, double beta_slope,
                                              double beta_curv, double kappa, ProblemSkeleton sk);

/// u(t,x) = |x|^2 + 2 (T-t) b.x + (T-t)^2 |b|^2 + (T-t) c_Q with f == 0, where
/// c_Q collects the diffusion and jump second moments. Coefficients must be
/// constant in x.
ManufacturedSolution make_levy_quadratic_manufactured(ProblemSkeleton sk);

}  // namespace jbsde::model
