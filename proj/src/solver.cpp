#include "jbsde/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <thread>

namespace jbsde::solver {

namespace {

constexpr int kBlock = 64;  // fixed reduction block: results independent of thread count

void parallel_blocks(int nblocks, int threads, const std::function<void(int)>& body) {
    if (threads <= 1 || nblocks <= 1) {
        for (int k = 0; k < nblocks; ++k) body(k);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        while (true) {
            const int k = next.fetch_add(1);
            if (k >= nblocks) break;
            body(k);
        }
    };
    std::vector<std::thread> pool;
    const int n = std::min(threads, nblocks);
    pool.reserve(n);
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

uint64_t path_seed(uint64_t master, uint64_t iteration, uint64_t path) {
    uint64_t s = seed_mix(master, 0x706174u);
    s = seed_mix(s, iteration);
    return seed_mix(s, path);
}

}  // namespace

PathBatch simulate_forward(const model::FbsdeProblem& problem, const TimeGrid& grid, int B,
                           uint64_t master_seed, uint64_t iteration, int threads) {
    const int M = grid.M, d = problem.d;
    const double dt = grid.dt(), sqrt_dt = std::sqrt(dt);
    PathBatch batch;
    batch.B = B;
    batch.M = M;
    batch.d = d;
    batch.master_seed = master_seed;
    batch.iteration = iteration;
    batch.X.resize(static_cast<size_t>(B) * (M + 1) * d);
    batch.dW.resize(static_cast<size_t>(B) * M * d);
    batch.jump_count.resize(static_cast<size_t>(B) * M);
    batch.jump_sum.assign(static_cast<size_t>(B) * M * d, 0.0);

    const Vec m1 = problem.measure.mean_jump();
    const int nblocks = (B + kBlock - 1) / kBlock;
    std::vector<std::string> block_error(nblocks);

    parallel_blocks(nblocks, threads, [&](int blk) {
        Vec bx(d), sw(d), gj(d), comp(d), x(d);
        for (int b = blk * kBlock; b < std::min(B, (blk + 1) * kBlock); ++b) {
            Rng rng(path_seed(master_seed, iteration, static_cast<uint64_t>(b)));
            std::copy(problem.x0.begin(), problem.x0.end(), batch.x(b, 0));
            std::copy(problem.x0.begin(), problem.x0.end(), x.begin());
            for (int n = 0; n < M; ++n) {
                double* dw = batch.dw(b, n);
                for (int i = 0; i < d; ++i) dw[i] = sqrt_dt * rng.normal();
                levy::JumpRecord rec = problem.measure.sample_jumps(dt, rng, n);
                batch.jump_count[static_cast<size_t>(b) * M + n] = rec.count();
                double* js = batch.jsum(b, n);
                for (const Vec& z : rec.sizes)
                    for (int i = 0; i < d; ++i) js[i] += z[i];

                bx = problem.b(x);
                const Mat sig = problem.sigma(x);
                const Mat gam = problem.gamma(x);
                matTvec(sig, std::span<const double>(dw, d), sw);
                matvec(gam, std::span<const double>(js, d), gj);
                matvec(gam, m1, comp);
                for (int i = 0; i < d; ++i)
                    x[i] += bx[i] * dt + sw[i] + gj[i] - dt * comp[i];
                if (!all_finite(x)) {
                    block_error[blk] = "non-finite state at path " + std::to_string(b) +
                                       ", step " + std::to_string(n + 1);
                    return;
                }
                std::copy(x.begin(), x.end(), batch.x(b, n + 1));
            }
        }
    });
    for (const auto& e : block_error)
        if (!e.empty()) throw NonFiniteState(e);
    return batch;
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

namespace {

struct StepValues {
    double u_base = 0.0;
    double psi = 0.0;
    double jump_diff = 0.0;
    Vec z;  // sigma^T grad U
};

/// Evaluates net n at the base point, the quadrature shifts and the jump
/// shift. The tape keeps the base-point activations recorded last when
/// `keep_base_recorded` is set (used by the backward pass).
void eval_step(nets::NetTape& tape, const nets::FeedForwardNet& net,
               const model::FbsdeProblem& problem, const PathBatch& batch, int b, int n,
               StepValues& out, Vec& shifted, Vec& gshift, Vec& grad_buf) {
    const int d = problem.d;
    const double* x = batch.x(b, n);
    const std::span<const double> xs(x, d);
    const Mat gam = problem.gamma(Vec(x, x + d));

    tape.bind(net);
    out.u_base = tape.forward(xs);
    tape.grad_x(grad_buf);
    const Mat sig = problem.sigma(Vec(x, x + d));
    out.z.resize(d);
    matTvec(sig, grad_buf, out.z);

    out.psi = 0.0;
    for (const levy::QuadNode& node : problem.measure.nodes()) {
        matvec(gam, node.z, gshift);
        for (int i = 0; i < d; ++i) shifted[i] = x[i] + gshift[i];
        out.psi += node.w * (tape.forward(shifted) - out.u_base);
    }

    out.jump_diff = 0.0;
    if (batch.jcount(b, n) > 0) {
        const double* js = batch.jsum(b, n);
        matvec(gam, std::span<const double>(js, d), gshift);
        for (int i = 0; i < d; ++i) shifted[i] = x[i] + gshift[i];
        out.jump_diff = tape.forward(shifted) - out.u_base;
    }
}

}  // namespace

RolloutResult rollout(const nets::NetFamily& family, const model::FbsdeProblem& problem,
                      const PathBatch& batch, bool retain_steps, int threads) {
    const int B = batch.B, M = batch.M, d = batch.d;
    if (static_cast<int>(family.nets.size()) != M)
        throw GridMismatch("family has " + std::to_string(family.nets.size()) +
                           " nets but the batch has " + std::to_string(M) + " steps");
    const double dt = static_cast<double>(problem.T) / M;

    RolloutResult res;
    res.y_terminal.resize(B);
    if (retain_steps) {
        res.Y.resize(static_cast<size_t>(B) * (M + 1));
        res.Z.resize(static_cast<size_t>(B) * M * d);
        res.Psi.resize(static_cast<size_t>(B) * M);
    }

    const int nblocks = (B + kBlock - 1) / kBlock;
    std::vector<double> block_loss(nblocks, 0.0);
    std::vector<std::string> block_error(nblocks);

    parallel_blocks(nblocks, threads, [&](int blk) {
        nets::NetTape tape;
        StepValues sv;
        Vec shifted(d), gshift(d), grad_buf(d);
        for (int b = blk * kBlock; b < std::min(B, (blk + 1) * kBlock); ++b) {
            double y = family.y0;
            if (retain_steps) res.Y[static_cast<size_t>(b) * (M + 1)] = y;
            for (int n = 0; n < M; ++n) {
                eval_step(tape, family.nets[n], problem, batch, b, n, sv, shifted, gshift,
                          grad_buf);
                const double t_n = dt * n;
                const Vec xv(batch.x(b, n), batch.x(b, n) + d);
                const double f = problem.driver(t_n, xv, y, sv.z, sv.psi);
                const double* dw = batch.dw(b, n);
                y += -f * dt + dot(sv.z, std::span<const double>(dw, d)) + sv.jump_diff -
                     dt * sv.psi;
                if (!std::isfinite(y)) {
                    block_error[blk] =
                        "non-finite Y at path " + std::to_string(b) + ", step " + std::to_string(n);
                    return;
                }
                if (retain_steps) {
                    res.Y[static_cast<size_t>(b) * (M + 1) + n + 1] = y;
                    for (int i = 0; i < d; ++i)
                        res.Z[(static_cast<size_t>(b) * M + n) * d + i] = sv.z[i];
                    res.Psi[static_cast<size_t>(b) * M + n] = sv.psi;
                }
            }
            res.y_terminal[b] = y;
            const Vec xM(batch.x(b, M), batch.x(b, M) + d);
            const double gap = problem.g(xM) - y;
            block_loss[blk] += gap * gap;
        }
    });
    for (const auto& e : block_error)
        if (!e.empty()) throw NonFiniteLoss(e);
    double loss = 0.0;
    for (double v : block_loss) loss += v;
    res.loss = loss / B;
    if (!std::isfinite(res.loss)) throw NonFiniteLoss("non-finite batch loss");
    return res;
}

RolloutTape rollout_with_tape(const nets::NetFamily& family, const model::FbsdeProblem& problem,
                              const PathBatch& batch, int threads) {
    const int B = batch.B, M = batch.M, d = batch.d;
    if (static_cast<int>(family.nets.size()) != M)
        throw GridMismatch("family size does not match the batch grid");
    const double dt = static_cast<double>(problem.T) / M;

    RolloutTape tape_out;
    tape_out.problem = &problem;
    tape_out.batch = &batch;
    tape_out.grid = TimeGrid{M, problem.T};
    tape_out.Y.resize(static_cast<size_t>(B) * (M + 1));
    tape_out.df_dy.resize(static_cast<size_t>(B) * M);
    tape_out.df_dpsi.resize(static_cast<size_t>(B) * M);
    tape_out.df_dz.resize(static_cast<size_t>(B) * M * d);

    const int nblocks = (B + kBlock - 1) / kBlock;
    std::vector<double> block_loss(nblocks, 0.0);
    std::vector<std::string> block_error(nblocks);

    parallel_blocks(nblocks, threads, [&](int blk) {
        nets::NetTape tape;
        StepValues sv;
        Vec shifted(d), gshift(d), grad_buf(d);
        for (int b = blk * kBlock; b < std::min(B, (blk + 1) * kBlock); ++b) {
            double y = family.y0;
            tape_out.Y[static_cast<size_t>(b) * (M + 1)] = y;
            for (int n = 0; n < M; ++n) {
                eval_step(tape, family.nets[n], problem, batch, b, n, sv, shifted, gshift,
                          grad_buf);
                const double t_n = dt * n;
                const Vec xv(batch.x(b, n), batch.x(b, n) + d);
                const model::DriverPartials dp = problem.driver.eval(t_n, xv, y, sv.z, sv.psi);
                tape_out.df_dy[static_cast<size_t>(b) * M + n] = dp.df_dy;
                tape_out.df_dpsi[static_cast<size_t>(b) * M + n] = dp.df_dpsi;
                for (int i = 0; i < d; ++i)
                    tape_out.df_dz[(static_cast<size_t>(b) * M + n) * d + i] = dp.df_dz[i];
                const double* dw = batch.dw(b, n);
                y += -dp.value * dt + dot(sv.z, std::span<const double>(dw, d)) + sv.jump_diff -
                     dt * sv.psi;
                if (!std::isfinite(y)) {
                    block_error[blk] =
                        "non-finite Y at path " + std::to_string(b) + ", step " + std::to_string(n);
                    return;
                }
                tape_out.Y[static_cast<size_t>(b) * (M + 1) + n + 1] = y;
            }
            const Vec xM(batch.x(b, M), batch.x(b, M) + d);
            const double gap = problem.g(xM) - y;
            block_loss[blk] += gap * gap;
        }
    });
    for (const auto& e : block_error)
        if (!e.empty()) throw NonFiniteLoss(e);
    double loss = 0.0;
    for (double v : block_loss) loss += v;
    tape_out.loss = loss / B;
    if (!std::isfinite(tape_out.loss)) throw NonFiniteLoss("non-finite batch loss");
    return tape_out;
}

Vec backprop_params(const nets::NetFamily& family, const RolloutTape& tape, int threads) {
    if (!tape.problem || !tape.batch) throw TapeMismatch("tape does not record a rollout");
    const model::FbsdeProblem& problem = *tape.problem;
    const PathBatch& batch = *tape.batch;
    const int B = batch.B, M = batch.M, d = batch.d;
    if (static_cast<int>(family.nets.size()) != M)
        throw TapeMismatch("family size does not match the tape");
    const double dt = tape.grid.dt();
    const size_t per = family.params_per_net();
    const size_t total = family.total_params();

    const int nblocks = (B + kBlock - 1) / kBlock;
    std::vector<Vec> block_grad(nblocks);

    parallel_blocks(nblocks, threads, [&](int blk) {
        Vec& grad = block_grad[blk];
        grad.assign(total, 0.0);
        nets::NetTape nt;
        Vec shifted(d), gshift(d), v(d), cz(d);
        for (int b = blk * kBlock; b < std::min(B, (blk + 1) * kBlock); ++b) {
            const Vec xM(batch.x(b, M), batch.x(b, M) + d);
            const double yM = tape.Y[static_cast<size_t>(b) * (M + 1) + M];
            // d(loss)/dY_M for the batch-mean squared terminal gap
            double adj = 2.0 * (yM - problem.g(xM)) / B;
            for (int n = M - 1; n >= 0; --n) {
                const size_t bn = static_cast<size_t>(b) * M + n;
                const double* x = batch.x(b, n);
                const std::span<const double> xs(x, d);
                const Vec xv(x, x + d);
                const Mat gam = problem.gamma(xv);
                const Mat sig = problem.sigma(xv);
                const double* dw = batch.dw(b, n);

                std::span<double> gn(grad.data() + 1 + static_cast<size_t>(n) * per, per);
                nt.bind(family.nets[n]);
                nt.forward(xs);

                // dY_{n+1}/dZ_n = dW - dt df_dz, routed through the
                // directional derivative of the net at the base point
                for (int i = 0; i < d; ++i)
                    cz[i] = adj * (dw[i] - dt * tape.df_dz[bn * d + i]);
                matvec(sig, cz, v);
                nt.dir_deriv(v);
                nt.accumulate_param_grad_dir(1.0, gn);

                // dY_{n+1}/dPsi_n = -dt (1 + df_dpsi)
                const double cpsi = -adj * dt * (1.0 + tape.df_dpsi[bn]);
                double wsum = 0.0;
                double base_coeff = 0.0;
                if (cpsi != 0.0) {
                    for (const levy::QuadNode& node : problem.measure.nodes()) wsum += node.w;
                    base_coeff -= cpsi * wsum;
                }
                const bool has_jump = batch.jcount(b, n) > 0;
                if (has_jump) base_coeff -= adj;
                if (base_coeff != 0.0) nt.accumulate_param_grad_value(base_coeff, gn);

                if (cpsi != 0.0) {
                    for (const levy::QuadNode& node : problem.measure.nodes()) {
                        matvec(gam, node.z, gshift);
                        for (int i = 0; i < d; ++i) shifted[i] = x[i] + gshift[i];
                        nt.forward(shifted);
                        nt.accumulate_param_grad_value(cpsi * node.w, gn);
                    }
                }
                if (has_jump) {
                    const double* js = batch.jsum(b, n);
                    matvec(gam, std::span<const double>(js, d), gshift);
                    for (int i = 0; i < d; ++i) shifted[i] = x[i] + gshift[i];
                    nt.forward(shifted);
                    nt.accumulate_param_grad_value(adj, gn);
                }
                adj *= 1.0 - dt * tape.df_dy[bn];
            }
            grad[0] += adj;  // dY_0/dy0 = 1
        }
    });

    Vec grad(total, 0.0);
    for (const Vec& g : block_grad)
        for (size_t i = 0; i < total; ++i) grad[i] += g[i];
    return grad;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainedSolver train(const model::FbsdeProblem& problem, const TimeGrid& grid,
                    const TrainConfig& config, nets::NetFamily family) {
    if (!problem.measure.finite_activity())
        throw FiniteActivityInput();  // route infinite activity through the epsilon pipeline
    const size_t total = family.total_params();
    Vec flat(total), m(total, 0.0), vv(total, 0.0);
    family.to_flat(flat);

    TrainedSolver out;
    out.loss_history.reserve(config.iterations);

    for (int it = 0; it < config.iterations; ++it) {
        PathBatch batch;
        RolloutTape tape;
        try {
            batch = simulate_forward(problem, grid, config.batch, config.master_seed,
                                     static_cast<uint64_t>(it), config.threads);
            tape = rollout_with_tape(family, problem, batch, config.threads);
        } catch (const NonFiniteState& e) {
            throw NonFiniteLoss("iteration " + std::to_string(it) + ": " + e.what());
        } catch (const NonFiniteLoss& e) {
            throw NonFiniteLoss("iteration " + std::to_string(it) + ": " + e.what());
        }
        out.loss_history.push_back(tape.loss);

        Vec grad = backprop_params(family, tape, config.threads);
        const double gnorm = norm2(grad);
        if (config.grad_clip > 0.0 && gnorm > config.grad_clip) {
            const double scale = config.grad_clip / gnorm;
            for (double& g : grad) g *= scale;
        }

        if (config.optimizer == TrainConfig::Optimizer::Adam) {
            const double t = it + 1;
            const double corr1 = 1.0 - std::pow(config.beta1, t);
            const double corr2 = 1.0 - std::pow(config.beta2, t);
            for (size_t i = 0; i < total; ++i) {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
                vv[i] = config.beta2 * vv[i] + (1.0 - config.beta2) * grad[i] * grad[i];
                flat[i] -= config.lr * (m[i] / corr1) /
                           (std::sqrt(vv[i] / corr2) + config.eps_adam);
            }
        } else {
            for (size_t i = 0; i < total; ++i) flat[i] -= config.lr * grad[i];
        }
        family.from_flat(flat);
    }
    out.family = std::move(family);
    return out;
}

// ---------------------------------------------------------------------------
// Epsilon pipeline
// ---------------------------------------------------------------------------

EpsilonPipeline build_epsilon_pipeline(const model::FbsdeProblem& problem, double epsilon,
                                       bool allow_finite) {
    if (problem.measure.finite_activity() && !allow_finite) throw FiniteActivityInput();
    auto [big, stats] = problem.measure.truncate(epsilon);

    EpsilonPipeline pipe;
    pipe.epsilon = epsilon;
    pipe.stats = stats;
    pipe.truncated = problem;
    pipe.truncated.measure = big;
    const Mat root = stats.sigma_eps_sqrt;
    auto sigma0 = problem.sigma;
    auto gamma0 = problem.gamma;
    pipe.truncated.sigma = [sigma0, gamma0, root](const Vec& x) {
        Mat s = sigma0(x);
        const Mat g = matmul(gamma0(x), root);
        for (size_t i = 0; i < s.a.size(); ++i) s.a[i] += g.a[i];
        return s;
    };
    pipe.sigma_eps_lipschitz =
        problem.constants.K_sigma + problem.constants.K_gamma * frobenius_norm(root);
    pipe.truncated.constants.K_sigma = pipe.sigma_eps_lipschitz;
    return pipe;
}

// ---------------------------------------------------------------------------
// Fine-grid coupling oracle
// ---------------------------------------------------------------------------

Vec euler_coupling_error(const model::FbsdeProblem& problem, const TimeGrid& coarse,
                         int fine_factor, int B, uint64_t master_seed, int threads) {
    const int M = coarse.M, d = problem.d, K = fine_factor;
    const double dt = coarse.dt(), dtf = dt / K, sqrt_dtf = std::sqrt(dtf);
    const Vec m1 = problem.measure.mean_jump();

    const int nblocks = (B + kBlock - 1) / kBlock;
    std::vector<Vec> block_sup(nblocks, Vec(M, 0.0));
    std::vector<std::string> block_error(nblocks);

    parallel_blocks(nblocks, threads, [&](int blk) {
        Vec xc(d), xf(d), bx(d), sw(d), gj(d), comp(d), dw(d), dw_sum(d), j_sum(d), jf(d);
        for (int b = blk * kBlock; b < std::min(B, (blk + 1) * kBlock); ++b) {
            Rng rng(path_seed(master_seed, 0xf1d3u, static_cast<uint64_t>(b)));
            xc = problem.x0;
            xf = problem.x0;
            for (int n = 0; n < M; ++n) {
                double sup = 0.0;
                {
                    double g2 = 0.0;
                    for (int i = 0; i < d; ++i) g2 += (xf[i] - xc[i]) * (xf[i] - xc[i]);
                    sup = g2;
                }
                std::fill(dw_sum.begin(), dw_sum.end(), 0.0);
                std::fill(j_sum.begin(), j_sum.end(), 0.0);
                for (int k = 0; k < K; ++k) {
                    for (int i = 0; i < d; ++i) {
                        dw[i] = sqrt_dtf * rng.normal();
                        dw_sum[i] += dw[i];
                    }
                    levy::JumpRecord rec = problem.measure.sample_jumps(dtf, rng);
                    std::fill(jf.begin(), jf.end(), 0.0);
                    for (const Vec& z : rec.sizes)
                        for (int i = 0; i < d; ++i) {
                            jf[i] += z[i];
                            j_sum[i] += z[i];
                        }
                    bx = problem.b(xf);
                    const Mat sig = problem.sigma(xf);
                    const Mat gam = problem.gamma(xf);
                    matTvec(sig, dw, sw);
                    matvec(gam, jf, gj);
                    matvec(gam, m1, comp);
                    for (int i = 0; i < d; ++i)
                        xf[i] += bx[i] * dtf + sw[i] + gj[i] - dtf * comp[i];
                    double g2 = 0.0;
                    for (int i = 0; i < d; ++i) g2 += (xf[i] - xc[i]) * (xf[i] - xc[i]);
                    sup = std::max(sup, g2);
                }
                if (!all_finite(xf)) {
                    block_error[blk] = "non-finite fine state at path " + std::to_string(b);
                    return;
                }
                block_sup[blk][n] += sup;
                // coarse Euler step from the aggregated increments
                bx = problem.b(xc);
                const Mat sig = problem.sigma(xc);
                const Mat gam = problem.gamma(xc);
                matTvec(sig, dw_sum, sw);
                matvec(gam, j_sum, gj);
                matvec(gam, m1, comp);
                for (int i = 0; i < d; ++i) xc[i] += bx[i] * dt + sw[i] + gj[i] - dt * comp[i];
            }
        }
    });
    for (const auto& e : block_error)
        if (!e.empty()) throw NonFiniteState(e);

    Vec mean(M, 0.0);
    for (const Vec& s : block_sup)
        for (int n = 0; n < M; ++n) mean[n] += s[n];
    for (int n = 0; n < M; ++n) mean[n] /= B;
    return mean;
}

}  // namespace jbsde::solver
