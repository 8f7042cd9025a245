#include <doctest.h>

#include <cmath>

#include "jbsde/reference.hpp"
#include "support.hpp"

using namespace jbsde;
using namespace jbsde::reference;

namespace {

levy::LevyMeasure centered_atoms() {
    return levy::make_atoms(1, {{{1.0}, 0.5}, {{-1.0}, 0.5}});
}

model::ProblemSkeleton skeleton_1d(double b0, double sig, double gam, levy::LevyMeasure m,
                                   double x0 = 1.0) {
    model::ProblemSkeleton sk;
    sk.d = 1;
    sk.T = 1.0;
    sk.x0 = {x0};
    sk.b = [b0](const Vec&) { return Vec{b0}; };
    sk.sigma = [sig](const Vec&) { return Mat::diagonal(1, sig); };
    sk.gamma = [gam](const Vec&) { return Mat::diagonal(1, gam); };
    sk.measure = std::move(m);
    return sk;
}

model::ManufacturedSolution linear_problem(double kappa = 0.5) {
    return model::make_linear_manufactured({1.0}, 0.0, 1.0, 0.5, kappa,
                                           skeleton_1d(0.0, 0.4, 1.0, centered_atoms()));
}

}  // namespace

TEST_CASE("regression basis enumerates monomials with the constant first") {
    const RegressionBasis b1(1, 3);
    CHECK(b1.size() == 4);
    const RegressionBasis b2(2, 2);
    CHECK(b2.size() == 6);  // 1, x, y, x^2, xy, y^2
    double phi[6];
    const double x[2] = {2.0, 3.0};
    b2.eval(x, phi);
    CHECK(phi[0] == 1.0);
    double sum = 0.0;
    for (double v : phi) sum += v;
    CHECK(sum == doctest::Approx(1 + 2 + 3 + 4 + 6 + 9));
}

TEST_CASE("solve_backward on a constant terminal value") {
    model::FbsdeProblem p = linear_problem().problem;
    const double c = 2.5;
    p.g = [c](const Vec&) { return c; };
    p.driver.f = [](double, const Vec&, double, const Vec&, double) { return 0.0; };
    p.driver.partials = nullptr;
    const solver::TimeGrid grid{8, 1.0};
    const solver::PathBatch batch = solver::simulate_forward(p, grid, 20000, 3);
    const RegressionBasis basis(1, 3);
    const BackwardSolution sol = solve_backward(p, grid, batch, basis);
    for (int b = 0; b < 50; ++b)
        for (int n = 0; n <= 8; ++n)
            CHECK(sol.Y[b * 9 + n] == doctest::Approx(c).epsilon(1e-8));
    // Z and Psi are pure regression noise: the batch mean of the fitted values
    // equals the target mean (the basis has an intercept), which is a centered
    // Monte Carlo average
    const double dt = grid.dt();
    for (int n = 0; n < 8; ++n) {
        std::vector<double> ztgt(batch.B), ptgt(batch.B);
        double zmean = 0.0, pmean = 0.0;
        for (int b = 0; b < batch.B; ++b) {
            ztgt[b] = c * batch.dw(b, n)[0] / dt;
            ptgt[b] = c * (batch.jcount(b, n) - dt * p.measure.total_mass()) / dt;
            zmean += sol.Z[b * 8 + n];
            pmean += sol.Psi[b * 8 + n];
        }
        const auto zse = test_support::mean_se(ztgt), pse = test_support::mean_se(ptgt);
        CHECK(std::abs(zmean / batch.B) <= 4.0 * zse.se + 1e-12);
        CHECK(std::abs(pmean / batch.B) <= 4.0 * pse.se + 1e-12);
        // projection of noise onto P basis functions: rms ~ sd sqrt(P/B)
        double zrms = 0.0, prms = 0.0;
        for (int b = 0; b < batch.B; ++b) {
            zrms += sol.Z[b * 8 + n] * sol.Z[b * 8 + n];
            prms += sol.Psi[b * 8 + n] * sol.Psi[b * 8 + n];
        }
        CHECK(std::sqrt(zrms / batch.B) < 0.5);
        CHECK(std::sqrt(prms / batch.B) < 0.5);
    }
}

TEST_CASE("solve_backward recovers Y0 of the linear problem at first order") {
    const model::ManufacturedSolution ms = linear_problem();
    const double y0_exact = ms.exact_triple(0.0, ms.problem.x0).y;
    const RegressionBasis basis(1, 1);
    std::vector<double> dts, errs;
    for (int M : {8, 16, 32}) {
        const solver::TimeGrid grid{M, 1.0};
        const solver::PathBatch batch =
            solver::simulate_forward(ms.problem, grid, 50000, 11, 0, 2);
        const BackwardSolution sol = solve_backward(ms.problem, grid, batch, basis);
        dts.push_back(grid.dt());
        errs.push_back(std::abs(sol.y0() - y0_exact));
    }
    CHECK(errs[2] < 0.02 * (1.0 + std::abs(y0_exact)));
    CHECK(test_support::loglog_slope(dts, errs) > 0.75);
}

TEST_CASE("Picard diverges when dt K_f >= 1") {
    // kappa = 2 makes K_f = 2; a single step of length 1 breaks the contraction
    const model::ManufacturedSolution ms = model::make_linear_manufactured(
        {1.0}, 0.0, 1.0, 0.0, 2.0, skeleton_1d(0.0, 0.4, 1.0, centered_atoms()));
    REQUIRE(ms.problem.constants.K_f >= 2.0);
    const solver::TimeGrid grid{1, 1.0};
    const solver::PathBatch batch = solver::simulate_forward(ms.problem, grid, 256, 5);
    CHECK_THROWS_AS(solve_backward(ms.problem, grid, batch, RegressionBasis(1, 1)),
                    PicardDivergence);
}

TEST_CASE("error functional") {
    const model::ManufacturedSolution ms = linear_problem();
    const solver::TimeGrid grid{6, 1.0};
    const solver::PathBatch batch = solver::simulate_forward(ms.problem, grid, 1000, 7);
    const ExactOnBatch exact = exact_on_batch(ms, ms.problem, batch, grid);
    SUBCASE("identical solutions give zero") {
        const ErrorFunctional ef = error_functional(exact.view(), exact.view(), batch, grid);
        CHECK(ef.errX == 0.0);
        CHECK(ef.errY == 0.0);
        CHECK(ef.errZ == 0.0);
        CHECK(ef.errPsi == 0.0);
    }
    SUBCASE("training shrinks the Y gap (paired batch)") {
        nets::NetFamily random_family =
            nets::init_family(6, {1, 11, 11, 1}, nets::Activation::Sigmoid, 77);
        solver::TrainConfig cfg;
        cfg.iterations = 400;
        cfg.batch = 128;
        cfg.master_seed = 9;
        const solver::TrainedSolver trained = solver::train(ms.problem, grid, cfg, random_family);
        const solver::RolloutResult r0 = solver::rollout(random_family, ms.problem, batch, true);
        const solver::RolloutResult r1 = solver::rollout(trained.family, ms.problem, batch, true);
        const DiscreteSolutionView v0{nullptr, r0.Y.data(), r0.Z.data(), r0.Psi.data()};
        const DiscreteSolutionView v1{nullptr, r1.Y.data(), r1.Z.data(), r1.Psi.data()};
        const ErrorFunctional e0 = error_functional(v0, exact.view(), batch, grid);
        const ErrorFunctional e1 = error_functional(v1, exact.view(), batch, grid);
        CHECK(e1.errY < e0.errY);
    }
    SUBCASE("grid mismatch is rejected") {
        CHECK_THROWS_AS(
            error_functional(exact.view(), exact.view(), batch, solver::TimeGrid{7, 1.0}),
            GridMismatch);
    }
}

TEST_CASE("tilde_tilde: interval averages of the closed forms") {
    const RegressionBasis basis(1, 2);
    SUBCASE("linear solution: Z is constant, Psi vanishes for centered jumps") {
        const model::ManufacturedSolution ms = linear_problem();
        const solver::TimeGrid grid{5, 1.0};
        const TildeTildeResult tt = tilde_tilde(ms, ms.problem, grid, 512, 13, basis);
        for (int b = 0; b < 512; ++b)
            for (int n = 0; n < 5; ++n) {
                CHECK(tt.z_avg[b * 5 + n] == doctest::Approx(0.4 * 1.0).epsilon(1e-12));
                CHECK(tt.z_cond[b * 5 + n] == doctest::Approx(0.4).epsilon(1e-9));
                CHECK(tt.psi_avg[b * 5 + n] == doctest::Approx(0.0).epsilon(1e-12));
            }
    }
    SUBCASE("quadratic solution against closed-form and nested-MC conditionals") {
        model::ManufacturedSolution ms = model::make_levy_quadratic_manufactured(
            skeleton_1d(0.2, 0.5, 1.0, centered_atoms()));
        const int M = 4, B = 4000;
        const solver::TimeGrid grid{M, 1.0};
        const TildeTildeResult tt = tilde_tilde(ms, ms.problem, grid, B, 17, basis);
        // E[Z_s | F_n] = 2 sigma (X_n + b (T - t_n)) does not depend on s
        Rng probe_rng(19);
        for (int probe = 0; probe < 10; ++probe) {
            const int b = static_cast<int>(probe_rng.next_u64() % B);
            const int n = static_cast<int>(probe_rng.next_u64() % M);
            const double xn = tt.coarse.x(b, n)[0];
            const double closed = 2.0 * 0.5 * (xn + 0.2 * (1.0 - grid.t(n)));
            // nested Monte Carlo from (t_n, xn), 4 sub-steps, left rule
            const int inner = 1000, K = 4;
            const double dtf = grid.dt() / K;
            std::vector<double> zbar(inner);
            for (int i = 0; i < inner; ++i) {
                Rng rng = Rng::child(777, {static_cast<uint64_t>(probe), static_cast<uint64_t>(i)});
                double x = xn, acc = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double s = grid.t(n) + k * dtf;
                    acc += 2.0 * 0.5 * (x + 0.2 * (1.0 - s)) / K;
                    const levy::JumpRecord rec = ms.problem.measure.sample_jumps(dtf, rng);
                    double js = 0.0;
                    for (const Vec& z : rec.sizes) js += z[0];
                    x += 0.2 * dtf + 0.5 * std::sqrt(dtf) * rng.normal() + js;
                }
                zbar[i] = acc;
            }
            const auto est = test_support::mean_se(zbar);
            CHECK(std::abs(est.mean - closed) < 4.0 * est.se + 1e-9);
            CHECK(std::abs(tt.z_cond[b * M + n] - closed) < 4.0 * est.se + 0.02);
        }
    }
}

TEST_CASE("backward solution satisfies the in-sample projection identities") {
    const model::ManufacturedSolution ms = linear_problem();
    const solver::TimeGrid grid{6, 1.0};
    const int B = 100000;
    const solver::PathBatch batch = solver::simulate_forward(ms.problem, grid, B, 21, 0, 2);
    const RegressionBasis basis(1, 3);
    const BackwardSolution sol = solve_backward(ms.problem, grid, batch, basis);
    const double dt = grid.dt();
    const double K_nu = ms.problem.measure.total_mass();
    const auto hfun = [](int k, double x) {
        switch (k) {
            case 0: return 1.0;
            case 1: return x;
            case 2: return x * x;
            case 3: return 1.0 + x;
            default: return (1.0 - x) * (1.0 - x);
        }
    };
    std::vector<double> term(B);
    for (int n = 1; n < 6; ++n) {  // n = 0 projects onto the constant only
        for (int k = 0; k < 5; ++k) {
            for (int b = 0; b < B; ++b) {
                const double x = batch.x(b, n)[0];
                const double y1 = sol.Y[b * 7 + n + 1];
                const Vec zv{sol.Z[b * 6 + n]};
                const double f = ms.problem.driver(grid.t(n), Vec{x}, sol.Y[b * 7 + n], zv,
                                                   sol.Psi[b * 6 + n]);
                term[b] = (y1 - sol.Y[b * 7 + n] + f * dt) * hfun(k, x);
            }
            auto est = test_support::mean_se(term);
            CHECK(std::abs(est.mean) <= 4.0 * est.se + 1e-9);
            for (int b = 0; b < B; ++b) {
                const double x = batch.x(b, n)[0];
                term[b] = (sol.Y[b * 7 + n + 1] * batch.dw(b, n)[0] - dt * sol.Z[b * 6 + n]) *
                          hfun(k, x);
            }
            est = test_support::mean_se(term);
            CHECK(std::abs(est.mean) <= 4.0 * est.se + 1e-9);
            for (int b = 0; b < B; ++b) {
                const double x = batch.x(b, n)[0];
                const double dn = batch.jcount(b, n) - dt * K_nu;
                term[b] =
                    (sol.Y[b * 7 + n + 1] * dn - dt * sol.Psi[b * 6 + n]) * hfun(k, x);
            }
            est = test_support::mean_se(term);
            CHECK(std::abs(est.mean) <= 4.0 * est.se + 1e-9);
        }
    }
}

TEST_CASE("raising the basis degree never raises the in-sample residual") {
    // compare on identical regression targets: the terminal step shares the
    // target g(X_M) between the two runs, and with M = 1 every step does
    const model::ManufacturedSolution ms = linear_problem();
    for (int M : {1, 6}) {
        const solver::TimeGrid grid{M, 1.0};
        const solver::PathBatch batch = solver::simulate_forward(ms.problem, grid, 20000, 33);
        const BackwardSolution s1 = solve_backward(ms.problem, grid, batch, RegressionBasis(1, 1));
        const BackwardSolution s3 = solve_backward(ms.problem, grid, batch, RegressionBasis(1, 3));
        CHECK(s3.steps[M - 1].residual_y <= s1.steps[M - 1].residual_y * (1.0 + 1e-9));
    }
}

TEST_CASE("condition number is reported and the n = 0 step is exact") {
    const model::ManufacturedSolution ms = linear_problem();
    const solver::TimeGrid grid{4, 1.0};
    const solver::PathBatch batch = solver::simulate_forward(ms.problem, grid, 5000, 41);
    const BackwardSolution sol = solve_backward(ms.problem, grid, batch, RegressionBasis(1, 3));
    CHECK(sol.steps[0].condition == 1.0);
    CHECK_FALSE(sol.steps[0].ridge_flagged);
    for (int n = 1; n < 4; ++n) CHECK(sol.steps[n].condition >= 1.0);
}
