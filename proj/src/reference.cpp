#include "jbsde/reference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace jbsde::reference {

RegressionBasis::RegressionBasis(int dim, int degree) : dim_(dim), degree_(degree) {
    if (dim < 1 || degree < 0) throw JbsdeError("regression basis needs dim >= 1, degree >= 0");
    // all multi-indices with total degree <= degree, constant term first
    std::vector<int> e(dim, 0);
    for (int total = 0; total <= degree; ++total) {
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == dim - 1) {
                e[pos] = left;
                exponents_.push_back(e);
                return;
            }
            for (int k = left; k >= 0; --k) {
                e[pos] = k;
                rec(pos + 1, left - k);
            }
        };
        rec(0, total);
    }
}

void RegressionBasis::eval(const double* x, double* out) const {
    for (size_t p = 0; p < exponents_.size(); ++p) {
        double v = 1.0;
        for (int i = 0; i < dim_; ++i)
            for (int k = 0; k < exponents_[p][i]; ++k) v *= x[i];
        out[p] = v;
    }
}

namespace {

struct Fit {
    Mat coef;  // m x P
    double cond = 1.0;
    bool flagged = false;
    Vec residual;  // per target: in-sample mean squared residual
};

/// Multi-target least squares of per-path targets on basis(X_n). At n = 0 all
/// paths share the same state, so the fit degenerates to plain means on the
/// constant basis element.
Fit fit_targets(const RegressionBasis& basis, const solver::PathBatch& batch, int n,
                const std::function<void(int, double*)>& fill_targets, int m,
                const BackwardOptions& opts) {
    const int B = batch.B, P = basis.size();
    Fit fit;
    fit.coef = Mat(m, P);
    fit.residual.assign(m, 0.0);
    std::vector<double> targets(m);

    if (n == 0) {
        for (int b = 0; b < B; ++b) {
            fill_targets(b, targets.data());
            for (int j = 0; j < m; ++j) fit.coef(j, 0) += targets[j];
        }
        for (int j = 0; j < m; ++j) fit.coef(j, 0) /= B;
        for (int b = 0; b < B; ++b) {
            fill_targets(b, targets.data());
            for (int j = 0; j < m; ++j) {
                const double r = targets[j] - fit.coef(j, 0);
                fit.residual[j] += r * r / B;
            }
        }
        return fit;
    }

    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(P, m);
    std::vector<double> phi(P);
    for (int b = 0; b < B; ++b) {
        basis.eval(batch.x(b, n), phi.data());
        fill_targets(b, targets.data());
        for (int p = 0; p < P; ++p) {
            for (int q = p; q < P; ++q) G(p, q) += phi[p] * phi[q];
            for (int j = 0; j < m; ++j) rhs(p, j) += phi[p] * targets[j];
        }
    }
    G /= B;
    rhs /= B;
    for (int p = 0; p < P; ++p)
        for (int q = p + 1; q < P; ++q) G(q, p) = G(p, q);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff();
    fit.cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    fit.flagged = fit.cond > opts.cond_threshold;

    Eigen::MatrixXd reg = G + opts.ridge * Eigen::MatrixXd::Identity(P, P);
    Eigen::MatrixXd coef = reg.ldlt().solve(rhs);  // P x m
    for (int j = 0; j < m; ++j)
        for (int p = 0; p < P; ++p) fit.coef(j, p) = coef(p, j);

    for (int b = 0; b < B; ++b) {
        basis.eval(batch.x(b, n), phi.data());
        fill_targets(b, targets.data());
        for (int j = 0; j < m; ++j) {
            double fitted = 0.0;
            for (int p = 0; p < P; ++p) fitted += fit.coef(j, p) * phi[p];
            const double r = targets[j] - fitted;
            fit.residual[j] += r * r / B;
        }
    }
    return fit;
}

void eval_fit(const Mat& coef, const double* phi, double* out) {
    for (int j = 0; j < coef.rows; ++j) {
        double s = 0.0;
        for (int p = 0; p < coef.cols; ++p) s += coef(j, p) * phi[p];
        out[j] = s;
    }
}

}  // namespace

BackwardSolution solve_backward(const model::FbsdeProblem& problem, const solver::TimeGrid& grid,
                                const solver::PathBatch& batch, const RegressionBasis& basis,
                                const BackwardOptions& opts) {
    if (batch.M != grid.M || batch.d != problem.d)
        throw GridMismatch("batch does not match the grid/problem");
    const int B = batch.B, M = batch.M, d = batch.d, P = basis.size();
    const double dt = grid.dt();
    const double K_nu = problem.measure.total_mass();

    BackwardSolution sol;
    sol.grid = grid;
    sol.steps.resize(M);
    sol.Y.assign(static_cast<size_t>(B) * (M + 1), 0.0);
    sol.Z.assign(static_cast<size_t>(B) * M * d, 0.0);
    sol.Psi.assign(static_cast<size_t>(B) * M, 0.0);

    for (int b = 0; b < B; ++b) {
        const Vec xM(batch.x(b, M), batch.x(b, M) + d);
        sol.Y[static_cast<size_t>(b) * (M + 1) + M] = problem.g(xM);
    }

    std::vector<double> phi(P), fitted(d + 2);
    for (int n = M - 1; n >= 0; --n) {
        // targets: [Y_{n+1}, Y_{n+1} dW / dt (d comps), Y_{n+1} dN~ / dt]
        auto fill = [&](int b, double* t) {
            const double y1 = sol.Y[static_cast<size_t>(b) * (M + 1) + n + 1];
            t[0] = y1;
            const double* dw = batch.dw(b, n);
            for (int i = 0; i < d; ++i) t[1 + i] = y1 * dw[i] / dt;
            const double dn = batch.jcount(b, n) - dt * K_nu;
            t[1 + d] = y1 * dn / dt;
        };
        Fit fit = fit_targets(basis, batch, n, fill, d + 2, opts);

        StepRegression& step = sol.steps[n];
        step.condition = fit.cond;
        step.ridge_flagged = fit.flagged;
        step.residual_y = fit.residual[0];
        step.coef_z = Mat(d, P);
        step.coef_psi.assign(P, 0.0);
        for (int p = 0; p < P; ++p) {
            for (int i = 0; i < d; ++i) step.coef_z(i, p) = fit.coef(1 + i, p);
            step.coef_psi[p] = fit.coef(1 + d, p);
        }

        // fitted conditional expectations per path, then the implicit driver
        // equation by Picard iteration
        const double t_n = grid.t(n);
        double max_change = 0.0;
        std::vector<double> h(B);
        for (int b = 0; b < B; ++b) {
            basis.eval(batch.x(b, n), phi.data());
            eval_fit(fit.coef, phi.data(), fitted.data());
            h[b] = fitted[0];
            for (int i = 0; i < d; ++i)
                sol.Z[(static_cast<size_t>(b) * M + n) * d + i] = fitted[1 + i];
            sol.Psi[static_cast<size_t>(b) * M + n] = fitted[1 + d];
        }
        std::vector<double> y(h);
        bool converged = false;
        for (int iter = 0; iter < opts.picard_max; ++iter) {
            max_change = 0.0;
            for (int b = 0; b < B; ++b) {
                const Vec xv(batch.x(b, n), batch.x(b, n) + d);
                const Vec zv(&sol.Z[(static_cast<size_t>(b) * M + n) * d],
                             &sol.Z[(static_cast<size_t>(b) * M + n) * d] + d);
                const double f =
                    problem.driver(t_n, xv, y[b], zv, sol.Psi[static_cast<size_t>(b) * M + n]);
                const double ynew = h[b] + f * dt;
                max_change = std::max(max_change, std::abs(ynew - y[b]));
                y[b] = ynew;
            }
            if (max_change < opts.picard_tol) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw PicardDivergence("implicit driver step " + std::to_string(n) +
                                   " did not contract (dt*K_f = " +
                                   std::to_string(dt * problem.constants.K_f) + ")");
        for (int b = 0; b < B; ++b) sol.Y[static_cast<size_t>(b) * (M + 1) + n] = y[b];

        // coefficient view of Y_n itself, for the emitted tables
        auto fill_y = [&](int b, double* t) { t[0] = y[b]; };
        Fit yfit = fit_targets(basis, batch, n, fill_y, 1, opts);
        step.coef_y.assign(P, 0.0);
        for (int p = 0; p < P; ++p) step.coef_y[p] = yfit.coef(0, p);
    }
    return sol;
}

ErrorFunctional error_functional(const DiscreteSolutionView& a, const DiscreteSolutionView& b,
                                 const solver::PathBatch& batch, const solver::TimeGrid& grid) {
    if (batch.M != grid.M) throw GridMismatch("batch and grid disagree on the step count");
    const int B = batch.B, M = batch.M, d = batch.d;
    const double dt = grid.dt();
    ErrorFunctional ef;

    const double* Xa = a.X ? a.X : batch.X.data();
    const double* Xb = b.X ? b.X : batch.X.data();
    for (int n = 0; n <= M; ++n) {
        double mx = 0.0, my = 0.0;
        for (int bb = 0; bb < B; ++bb) {
            double g2 = 0.0;
            const size_t off = (static_cast<size_t>(bb) * (M + 1) + n) * d;
            for (int i = 0; i < d; ++i) {
                const double gap = Xa[off + i] - Xb[off + i];
                g2 += gap * gap;
            }
            mx += g2;
            const double gy = a.Y[static_cast<size_t>(bb) * (M + 1) + n] -
                              b.Y[static_cast<size_t>(bb) * (M + 1) + n];
            my += gy * gy;
        }
        ef.errX = std::max(ef.errX, mx / B);
        ef.errY = std::max(ef.errY, my / B);
    }
    for (int n = 0; n < M; ++n) {
        double mz = 0.0, mp = 0.0;
        for (int bb = 0; bb < B; ++bb) {
            const size_t off = (static_cast<size_t>(bb) * M + n) * d;
            double g2 = 0.0;
            for (int i = 0; i < d; ++i) {
                const double gap = a.Z[off + i] - b.Z[off + i];
                g2 += gap * gap;
            }
            mz += g2;
            const double gp = a.Psi[static_cast<size_t>(bb) * M + n] -
                              b.Psi[static_cast<size_t>(bb) * M + n];
            mp += gp * gp;
        }
        ef.errZ += dt * mz / B;
        ef.errPsi += dt * mp / B;
    }
    return ef;
}

ExactOnBatch exact_on_batch(const model::ManufacturedSolution& ms,
                            const model::FbsdeProblem& sim_problem,
                            const solver::PathBatch& batch, const solver::TimeGrid& grid) {
    const int B = batch.B, M = batch.M, d = batch.d;
    const double dt = grid.dt();
    ExactOnBatch ex;
    ex.Y.resize(static_cast<size_t>(B) * (M + 1));
    ex.Z.resize(static_cast<size_t>(B) * M * d);
    ex.Psi.resize(static_cast<size_t>(B) * M);

    const auto nodes = sim_problem.measure.nodes();
    Vec gz(d), shifted(d);
    for (int b = 0; b < B; ++b) {
        for (int n = 0; n <= M; ++n) {
            const double t_n = n == M ? grid.T : dt * n;
            const Vec xv(batch.x(b, n), batch.x(b, n) + d);
            ex.Y[static_cast<size_t>(b) * (M + 1) + n] = ms.u(t_n, xv);
            if (n == M) continue;
            const Vec gu = ms.grad_u(t_n, xv);
            const Vec z = matTvec(sim_problem.sigma(xv), gu);
            for (int i = 0; i < d; ++i) ex.Z[(static_cast<size_t>(b) * M + n) * d + i] = z[i];
            const Mat gam = sim_problem.gamma(xv);
            const double ux = ex.Y[static_cast<size_t>(b) * (M + 1) + n];
            double psi = 0.0;
            for (const levy::QuadNode& node : nodes) {
                matvec(gam, node.z, gz);
                for (int i = 0; i < d; ++i) shifted[i] = xv[i] + gz[i];
                psi += node.w * (ms.u(t_n, shifted) - ux);
            }
            ex.Psi[static_cast<size_t>(b) * M + n] = psi;
        }
    }
    return ex;
}

TildeTildeResult tilde_tilde(const model::ManufacturedSolution& ms,
                             const model::FbsdeProblem& sim_problem, const solver::TimeGrid& grid,
                             int B, uint64_t master_seed, const RegressionBasis& basis,
                             int subfactor) {
    const int M = grid.M, d = sim_problem.d, K = subfactor;
    const double dt = grid.dt(), dtf = dt / K, sqrt_dtf = std::sqrt(dtf);
    const Vec m1 = sim_problem.measure.mean_jump();
    const auto nodes = sim_problem.measure.nodes();

    TildeTildeResult res;
    solver::PathBatch& batch = res.coarse;
    batch.B = B;
    batch.M = M;
    batch.d = d;
    batch.master_seed = master_seed;
    batch.X.resize(static_cast<size_t>(B) * (M + 1) * d);
    batch.dW.assign(static_cast<size_t>(B) * M * d, 0.0);
    batch.jump_count.assign(static_cast<size_t>(B) * M, 0);
    batch.jump_sum.assign(static_cast<size_t>(B) * M * d, 0.0);
    res.z_avg.assign(static_cast<size_t>(B) * M * d, 0.0);
    res.psi_avg.assign(static_cast<size_t>(B) * M, 0.0);

    Vec xf(d), xc(d), bx(d), sw(d), gj(d), comp(d), dw(d), jf(d), gz(d), shifted(d);
    for (int b = 0; b < B; ++b) {
        Rng rng = Rng::child(master_seed, {0x7474u, static_cast<uint64_t>(b)});
        xf = sim_problem.x0;
        xc = sim_problem.x0;
        std::copy(xc.begin(), xc.end(), batch.x(b, 0));
        for (int n = 0; n < M; ++n) {
            double* zacc = &res.z_avg[(static_cast<size_t>(b) * M + n) * d];
            double& psiacc = res.psi_avg[static_cast<size_t>(b) * M + n];
            double* dwsum = batch.dw(b, n);
            double* jsum = batch.jsum(b, n);
            int& count = batch.jump_count[static_cast<size_t>(b) * M + n];
            for (int k = 0; k < K; ++k) {
                const double s = dt * n + dtf * k;
                // left-rule accumulation of the closed forms at the sub-grid state
                const Vec gu = ms.grad_u(s, xf);
                const Vec zk = matTvec(sim_problem.sigma(xf), gu);
                for (int i = 0; i < d; ++i) zacc[i] += zk[i] / K;
                const Mat gam = sim_problem.gamma(xf);
                const double ux = ms.u(s, xf);
                double psik = 0.0;
                for (const levy::QuadNode& node : nodes) {
                    matvec(gam, node.z, gz);
                    for (int i = 0; i < d; ++i) shifted[i] = xf[i] + gz[i];
                    psik += node.w * (ms.u(s, shifted) - ux);
                }
                psiacc += psik / K;

                for (int i = 0; i < d; ++i) {
                    dw[i] = sqrt_dtf * rng.normal();
                    dwsum[i] += dw[i];
                }
                levy::JumpRecord rec = sim_problem.measure.sample_jumps(dtf, rng);
                count += rec.count();
                std::fill(jf.begin(), jf.end(), 0.0);
                for (const Vec& z : rec.sizes)
                    for (int i = 0; i < d; ++i) {
                        jf[i] += z[i];
                        jsum[i] += z[i];
                    }
                bx = sim_problem.b(xf);
                const Mat sig = sim_problem.sigma(xf);
                matTvec(sig, dw, sw);
                matvec(gam, jf, gj);
                matvec(gam, m1, comp);
                for (int i = 0; i < d; ++i) xf[i] += bx[i] * dtf + sw[i] + gj[i] - dtf * comp[i];
            }
            // coarse Euler step from aggregated increments
            bx = sim_problem.b(xc);
            const Mat sig = sim_problem.sigma(xc);
            const Mat gam = sim_problem.gamma(xc);
            matTvec(sig, std::span<const double>(dwsum, d), sw);
            matvec(gam, std::span<const double>(jsum, d), gj);
            matvec(gam, m1, comp);
            for (int i = 0; i < d; ++i) xc[i] += bx[i] * dt + sw[i] + gj[i] - dt * comp[i];
            std::copy(xc.begin(), xc.end(), batch.x(b, n + 1));
        }
    }

    // conditional versions by regression on basis(X_n)
    res.z_cond.assign(static_cast<size_t>(B) * M * d, 0.0);
    res.psi_cond.assign(static_cast<size_t>(B) * M, 0.0);
    const int P = basis.size();
    std::vector<double> phi(P), fitted(d + 1);
    BackwardOptions opts;
    for (int n = 0; n < M; ++n) {
        auto fill = [&](int b, double* t) {
            for (int i = 0; i < d; ++i) t[i] = res.z_avg[(static_cast<size_t>(b) * M + n) * d + i];
            t[d] = res.psi_avg[static_cast<size_t>(b) * M + n];
        };
        Fit fit = fit_targets(basis, batch, n, fill, d + 1, opts);
        for (int b = 0; b < B; ++b) {
            basis.eval(batch.x(b, n), phi.data());
            eval_fit(fit.coef, phi.data(), fitted.data());
            for (int i = 0; i < d; ++i)
                res.z_cond[(static_cast<size_t>(b) * M + n) * d + i] = fitted[i];
            res.psi_cond[static_cast<size_t>(b) * M + n] = fitted[d];
        }
    }
    return res;
}

}  // namespace jbsde::reference
