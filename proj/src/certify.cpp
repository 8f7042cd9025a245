#include "jbsde/certify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <json.hpp>

namespace jbsde::certify {

namespace {

double golden_section(const std::function<double(double)>& f, double lo, double hi,
                      double rel_tol = 1e-10) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > rel_tol * (std::abs(a) + std::abs(b)) && b - a > 1e-300) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return fc < fd ? c : d;
}

/// Log-grid scan, then golden section on the bracketing interval.
double log_grid_minimize(const std::function<double(double)>& f, double lo, double hi,
                         int grid_points) {
    const double llo = std::log(lo), lhi = std::log(hi);
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= grid_points; ++i) {
        const double x = std::exp(llo + (lhi - llo) * i / grid_points);
        const double v = f(x);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    const int i0 = std::max(0, best - 1), i1 = std::min(grid_points, best + 1);
    const double a = std::exp(llo + (lhi - llo) * i0 / grid_points);
    const double b = std::exp(llo + (lhi - llo) * i1 / grid_points);
    return golden_section(f, a, b);
}

double sum_sq_coeff(double lambda_sq, double K_f, int coefficient) {
    return K_f * (coefficient * lambda_sq + 1.0 / lambda_sq);
}

}  // namespace

LambdaInterval lambda_feasible_interval(double K_f, double K_nu, double dt) {
    if (K_f <= 0.0 || dt <= 0.0)
        throw ArgOutOfDomain("lambda interval requires K_f > 0 and dt > 0");
    LambdaInterval iv;
    const double q = 12.0 * dt * dt * K_f * K_f;
    if (q > 1.0) return iv;  // discriminant negative
    const double root = std::sqrt(1.0 - q);
    const double lo_dt = (1.0 - root) / (6.0 * dt * K_f);
    const double hi_dt = (1.0 + root) / (6.0 * dt * K_f);
    iv.lambda_sq_min = std::max(std::max(1.0, K_nu) * K_f, lo_dt);
    iv.lambda_sq_max = hi_dt;
    iv.feasible = iv.lambda_sq_min <= iv.lambda_sq_max;
    return iv;
}

double f1(double lambda_sq, double K_f, double dt, int coefficient) {
    if (lambda_sq <= 0.0 || dt <= 0.0) throw ArgOutOfDomain("f1 requires lambda_sq > 0, dt > 0");
    const double arg = 1.0 - dt * sum_sq_coeff(lambda_sq, K_f, coefficient);
    if (arg <= 0.0)
        throw ArgOutOfDomain("f1 log argument nonpositive: dt too large for this lambda");
    return -std::log(arg) / dt;
}

double f1_limit(double lambda_sq, double K_f, int coefficient) {
    if (lambda_sq <= 0.0) throw ArgOutOfDomain("f1 limit requires lambda_sq > 0");
    return sum_sq_coeff(lambda_sq, K_f, coefficient);
}

double posteriori_constant(double lambda_sq, double lambdabar, double K_f, double K_nu, double T,
                           int coefficient) {
    if (lambdabar <= 0.0) throw ArgOutOfDomain("posteriori constant requires lambdabar > 0");
    const double denom = std::min(1.0, K_nu > 0.0 ? 1.0 / K_nu : 1.0) -
                         (lambda_sq > 0.0 ? K_f / lambda_sq : 0.0);
    if (lambda_sq <= std::max(1.0, K_nu) * K_f || denom <= 0.0)
        throw DenominatorNonpositive("lambda_sq must exceed (1 max K_nu) K_f strictly");
    const double s = sum_sq_coeff(lambda_sq, K_f, coefficient);
    const double f1bar = s + lambdabar;
    return 2.0 * (1.0 + 1.0 / lambdabar) * std::exp(f1bar * T) * (1.0 + (1.0 + T * s) / denom);
}

double epsilon_constant(double lambda_sq, double lambdabar, double K_f, double K_nu_eps, double T,
                        int coefficient) {
    return posteriori_constant(lambda_sq, lambdabar, K_f, K_nu_eps, T, coefficient);
}

PosterioriMin minimize_posteriori(double K_f, double K_nu, double T, double dt, int coefficient,
                                  int grid_points) {
    const LambdaInterval iv = lambda_feasible_interval(K_f, K_nu, dt);
    if (!iv.feasible) throw InfeasibleError("no lambda satisfies the step-size constraint");
    // the strict constraint leaves an open lower end; nudge inside it
    const double strict_lo = std::max(1.0, K_nu) * K_f;
    const double lo = std::max(iv.lambda_sq_min, strict_lo) * (1.0 + 1e-9) + 1e-300;
    const double hi = iv.lambda_sq_max;
    if (lo >= hi) throw InfeasibleError("feasible lambda interval is empty after the strict bound");

    // the lambdabar factor (1 + 1/lb) e^{lb T} separates from the lambda part
    auto lb_factor = [T](double lb) { return (1.0 + 1.0 / lb) * std::exp(lb * T); };
    const double lb_star = log_grid_minimize(lb_factor, 1e-6, 10.0, grid_points);

    auto c_of_lambda = [&](double l2) {
        return posteriori_constant(l2, lb_star, K_f, K_nu, T, coefficient);
    };
    const double l2_star = log_grid_minimize(c_of_lambda, lo, hi, grid_points);

    PosterioriMin out;
    out.lambda_sq = l2_star;
    out.lambdabar = lb_star;
    out.constant = posteriori_constant(l2_star, lb_star, K_f, K_nu, T, coefficient);
    return out;
}

double BoundInputs::k_bar() const {
    return std::max({K_b, K_sigma, K_gamma, K_f, K_nu});
}

BoundInputs bound_inputs(const model::FbsdeProblem& problem) {
    BoundInputs in;
    in.K_b = problem.constants.K_b;
    in.K_sigma = problem.constants.K_sigma;
    in.K_gamma = problem.constants.K_gamma;
    in.K_f = problem.constants.K_f;
    in.K_ft = problem.constants.K_ft;
    in.K_g = problem.constants.K_g;
    in.K_nu = problem.measure.total_mass();
    in.T = problem.T;
    in.second_moment = problem.measure.second_moment(levy::Region::All);
    return in;
}

double apriori_H(double x, const BoundInputs& in) {
    if (x <= 0.0) throw NonpositiveX();
    const double kb = in.k_bar();
    const double kb2 = kb * kb;
    const double exponent =
        in.T * (x + 5.0 * kb2 / x +
                kb2 * std::max(1.0 / x + 1.0 + in.second_moment, 5.0 / x));
    return (1.0 + in.K_g) * (1.0 + in.K_g) * (1.0 + 5.0 * in.K_f * in.K_f / x) *
           std::exp(exponent);
}

HMin minimize_H(const BoundInputs& in, int grid_points) {
    auto f = [&](double x) { return apriori_H(x, in); };
    const double x_star = log_grid_minimize(f, 1e-8, 1e3, grid_points);
    return {x_star, f(x_star)};
}

double error_rho(const nets::NetFamily& family, const model::ManufacturedSolution& ms,
                 const model::FbsdeProblem& sim_problem, const solver::PathBatch& batch,
                 const solver::TimeGrid& grid) {
    const int B = batch.B, M = batch.M, d = batch.d;
    if (static_cast<int>(family.nets.size()) != M)
        throw GridMismatch("family size does not match the batch grid");
    const double K_nu = sim_problem.measure.total_mass();
    const auto nodes = sim_problem.measure.nodes();
    nets::NetTape tape;
    Vec gz(d), shifted(d);
    double worst = 0.0;
    for (int n = 0; n < M; ++n) {
        tape.bind(family.nets[n]);
        const double t_n = grid.t(n);
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const Vec xv(batch.x(b, n), batch.x(b, n) + d);
            const Mat gam = sim_problem.gamma(xv);
            double term = 0.0;
            for (const levy::QuadNode& node : nodes) {
                matvec(gam, node.z, gz);
                for (int i = 0; i < d; ++i) shifted[i] = xv[i] + gz[i];
                const double gap = ms.u(t_n, shifted) - tape.forward(shifted);
                term += node.w * gap * gap;
            }
            const double base_gap = ms.u(t_n, xv) - tape.forward(xv);
            term += K_nu * base_gap * base_gap;
            acc += term;
        }
        worst = std::max(worst, acc / B);
    }
    return worst;
}

namespace {

struct LossEstimate {
    double loss = 0.0;
    double ci = 0.0;
};

LossEstimate estimate_terminal_loss(const nets::NetFamily& family,
                                    const model::FbsdeProblem& problem,
                                    const solver::TimeGrid& grid, int B, uint64_t seed) {
    const solver::PathBatch batch =
        solver::simulate_forward(problem, grid, B, seed, 0xe7a1u);
    const solver::RolloutResult roll = solver::rollout(family, problem, batch);
    // per-path squared gaps for the standard error
    double mean = 0.0, m2 = 0.0;
    for (int b = 0; b < B; ++b) {
        const Vec xM(batch.x(b, grid.M), batch.x(b, grid.M) + problem.d);
        const double gap = problem.g(xM) - roll.y_terminal[b];
        const double sq = gap * gap;
        const double delta = sq - mean;
        mean += delta / (b + 1);
        m2 += delta * (sq - mean);
    }
    LossEstimate est;
    est.loss = mean;
    est.ci = B > 1 ? 1.96 * std::sqrt(m2 / (B - 1) / B) : 0.0;
    return est;
}

}  // namespace

Certificate posteriori_certificate(const nets::NetFamily& family,
                                   const model::FbsdeProblem& problem,
                                   const solver::TimeGrid& grid, uint64_t eval_seed,
                                   const CertificateOptions& opts) {
    const double K_f = problem.constants.K_f;
    const double K_nu = problem.measure.total_mass();
    const double dt = grid.dt();

    Certificate cert;
    cert.K_f = K_f;
    cert.K_nu = K_nu;
    cert.T = problem.T;
    cert.dt = dt;
    cert.f1_coefficient = opts.f1_coefficient;
    cert.eval_seed = eval_seed;
    cert.eval_batch = opts.eval_batch;

    if (opts.lambda_sq_override || opts.lambdabar_override) {
        cert.lambda_sq = opts.lambda_sq_override.value_or(0.0);
        cert.lambdabar = opts.lambdabar_override.value_or(1.0);
        const LambdaInterval iv = lambda_feasible_interval(K_f, K_nu, dt);
        if (!iv.feasible || cert.lambda_sq < iv.lambda_sq_min ||
            cert.lambda_sq > iv.lambda_sq_max)
            throw InfeasibleError(
                "lambda override violates the feasibility constraint "
                "lambda^2 in [max((1 max K_nu) K_f, dt branch), dt branch]");
        cert.constant = posteriori_constant(cert.lambda_sq, cert.lambdabar, K_f, K_nu,
                                            problem.T, opts.f1_coefficient);
    } else {
        const PosterioriMin pm =
            minimize_posteriori(K_f, K_nu, problem.T, dt, opts.f1_coefficient);
        cert.lambda_sq = pm.lambda_sq;
        cert.lambdabar = pm.lambdabar;
        cert.constant = pm.constant;
    }
    cert.f1_value = f1(cert.lambda_sq, K_f, dt, opts.f1_coefficient);

    const LossEstimate est =
        estimate_terminal_loss(family, problem, grid, opts.eval_batch, eval_seed);
    cert.loss = est.loss;
    cert.loss_ci = est.ci;
    cert.bound_value = cert.constant * (cert.loss + cert.loss_ci);
    if (opts.fitted_path_constant) {
        cert.dt_remainder = *opts.fitted_path_constant * dt;
        cert.dt_remainder_fitted = true;
    }
    return cert;
}

Certificate epsilon_certificate(const nets::NetFamily& family,
                                const solver::EpsilonPipeline& pipeline,
                                const solver::TimeGrid& grid, uint64_t eval_seed,
                                const CertificateOptions& opts) {
    Certificate cert =
        posteriori_certificate(family, pipeline.truncated, grid, eval_seed, opts);
    cert.epsilon_variant = true;
    cert.epsilon = pipeline.epsilon;
    cert.bound_value = 2.0 * cert.constant * (cert.loss + cert.loss_ci);
    cert.small_jump_remainder = pipeline.stats.small_second_moment;
    return cert;
}

std::string certificate_to_json(const Certificate& cert) {
    nlohmann::json j;
    j["kind"] = cert.epsilon_variant ? "a_posteriori_truncated" : "a_posteriori";
    j["bound_value"] = cert.bound_value;
    j["certified_term"] = {
        {"formula", cert.epsilon_variant
                        ? "2 * C_eps(lambda, lambdabar) * (terminal_loss + ci)"
                        : "C(lambda, lambdabar) * (terminal_loss + ci)"},
        {"constant", cert.constant},
        {"constant_formula",
         "2*(1+1/lambdabar)*exp((K_f*(c*l2+1/l2)+lambdabar)*T)*"
         "(1+(1+T*K_f*(c*l2+1/l2))/(min(1,1/K_nu)-K_f/l2))"},
        {"lambda_sq", cert.lambda_sq},
        {"lambdabar", cert.lambdabar},
        {"coefficient_c", cert.f1_coefficient},
        {"f1", cert.f1_value},
        {"f1_formula", "-ln(1 - dt*K_f*(c*l2 + 1/l2))/dt"},
        {"terminal_loss", cert.loss},
        {"loss_ci_95", cert.loss_ci},
    };
    j["uncertified_remainders"] = {
        {"dt_term",
         {{"formula", "C * dt, C unknown (depends on the problem data)"},
          {"dt", cert.dt},
          {"fitted_value", cert.dt_remainder_fitted ? nlohmann::json(cert.dt_remainder)
                                                    : nlohmann::json()},
          {"fitted", cert.dt_remainder_fitted}}},
    };
    if (cert.epsilon_variant) {
        j["uncertified_remainders"]["small_jump_term"] = {
            {"formula", "C_eps * integral of |z|^2 over {|z| <= eps}"},
            {"epsilon", cert.epsilon},
            {"second_moment_small", cert.small_jump_remainder},
        };
    }
    j["inputs"] = {
        {"K_f", cert.K_f},      {"K_nu", cert.K_nu},           {"T", cert.T},
        {"dt", cert.dt},        {"eval_seed", cert.eval_seed}, {"eval_batch", cert.eval_batch},
    };
    return j.dump(2);
}

AprioriReport apriori_report(const nets::NetFamily& family, const model::ManufacturedSolution& ms,
                             const model::FbsdeProblem& sim_problem, const solver::TimeGrid& grid,
                             const reference::TildeTildeResult& tt, const AprioriOptions& opts) {
    const int B = tt.coarse.B, M = tt.coarse.M, d = tt.coarse.d;
    const double dt = grid.dt();

    AprioriReport rep;
    rep.lambda3 = opts.lambda3;
    rep.lambda4 = opts.lambda4;
    rep.dt = dt;

    const BoundInputs inputs = bound_inputs(sim_problem);
    const HMin hm = minimize_H(inputs);
    rep.h_bar = hm.value;
    rep.h_argmin = hm.x;

    // rollout of the family on the same batch gives the scheme's Z and Psi
    const solver::RolloutResult roll = solver::rollout(family, sim_problem, tt.coarse, true);
    rep.measured_terminal_loss = roll.loss;

    double zgap = 0.0, psigap = 0.0;
    for (int n = 0; n < M; ++n) {
        double mz = 0.0, mp = 0.0;
        for (int b = 0; b < B; ++b) {
            const size_t off = (static_cast<size_t>(b) * M + n) * d;
            double g2 = 0.0;
            for (int i = 0; i < d; ++i) {
                const double gap = tt.z_cond[off + i] - roll.Z[off + i];
                g2 += gap * gap;
            }
            mz += g2;
            const double gp =
                tt.psi_cond[static_cast<size_t>(b) * M + n] - roll.Psi[static_cast<size_t>(b) * M + n];
            mp += gp * gp;
        }
        zgap += dt * mz / B;
        psigap += dt * mp / B;
    }
    rep.z_gap_sum = zgap;
    rep.psi_gap_sum = psigap;

    if (opts.fitted_path_constant) {
        rep.path_term = 4.0 * *opts.fitted_path_constant * dt;
        rep.path_term_fitted = true;
    }
    const double lambda4_factor =
        opts.epsilon_variant ? 1.0 + 1.0 / opts.lambda4 : 1.0 + opts.lambda4;
    rep.network_term = 3.0 * rep.h_bar * (1.0 + opts.lambda3) * lambda4_factor *
                       (rep.path_term + rep.z_gap_sum + rep.psi_gap_sum);

    const model::ExactTriple e0 = ms.exact_triple(0.0, sim_problem.x0);
    rep.y0_gap_sq = (e0.y - family.y0) * (e0.y - family.y0);
    rep.error_rho = error_rho(family, ms, sim_problem, tt.coarse, grid);
    rep.remainder_inputs = rep.y0_gap_sq + dt + rep.error_rho;
    if (opts.c_lambda3) {
        const double kg = 1.0 + inputs.K_g;
        rep.remainder_term = kg * kg * *opts.c_lambda3 * rep.remainder_inputs;
    }
    rep.total = rep.network_term + rep.remainder_term.value_or(0.0);
    return rep;
}

}  // namespace jbsde::certify
