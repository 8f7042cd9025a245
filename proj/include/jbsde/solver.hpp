#pragma once

#include <cstdint>
#include <vector>

#include "jbsde/common.hpp"
#include "jbsde/levy.hpp"
#include "jbsde/model.hpp"
#include "jbsde/nets.hpp"

namespace jbsde::solver {

struct TimeGrid {
    int M = 1;
    double T = 1.0;
    double dt() const { return T / M; }
    double t(int n) const { return T * n / M; }
};

/// Simulated forward paths on a uniform grid. Jumps are stored per interval
/// as (count, sum of sizes): the scheme only ever uses the sum.
struct PathBatch {
    int B = 0;
    int M = 0;
    int d = 1;
    std::vector<double> X;         // B x (M+1) x d
    std::vector<double> dW;        // B x M x d
    std::vector<int> jump_count;   // B x M
    std::vector<double> jump_sum;  // B x M x d
    uint64_t master_seed = 0;
    uint64_t iteration = 0;

    const double* x(int b, int n) const { return &X[(static_cast<size_t>(b) * (M + 1) + n) * d]; }
    double* x(int b, int n) { return &X[(static_cast<size_t>(b) * (M + 1) + n) * d]; }
    const double* dw(int b, int n) const { return &dW[(static_cast<size_t>(b) * M + n) * d]; }
    double* dw(int b, int n) { return &dW[(static_cast<size_t>(b) * M + n) * d]; }
    const double* jsum(int b, int n) const {
        return &jump_sum[(static_cast<size_t>(b) * M + n) * d];
    }
    double* jsum(int b, int n) { return &jump_sum[(static_cast<size_t>(b) * M + n) * d]; }
    int jcount(int b, int n) const { return jump_count[static_cast<size_t>(b) * M + n]; }
};

/// Euler step with compensated jumps; path i is reproducible from
/// (master_seed, iteration, i) alone, so results do not depend on threading.
PathBatch simulate_forward(const model::FbsdeProblem& problem, const TimeGrid& grid, int B,
                           uint64_t master_seed, uint64_t iteration = 0, int threads = 1);

struct RolloutResult {
    double loss = 0.0;
    std::vector<double> y_terminal;  // B
    // retained per-step values (empty unless requested)
    std::vector<double> Y;    // B x (M+1)
    std::vector<double> Z;    // B x M x d
    std::vector<double> Psi;  // B x M
};

RolloutResult rollout(const nets::NetFamily& family, const model::FbsdeProblem& problem,
                      const PathBatch& batch, bool retain_steps = false, int threads = 1);

/// Values recorded by a rollout that a later backward pass needs; network
/// activations are recomputed rather than stored.
struct RolloutTape {
    const model::FbsdeProblem* problem = nullptr;
    const PathBatch* batch = nullptr;
    TimeGrid grid;
    double loss = 0.0;
    std::vector<double> Y;        // B x (M+1)
    std::vector<double> df_dy;    // B x M
    std::vector<double> df_dpsi;  // B x M
    std::vector<double> df_dz;    // B x M x d
};

RolloutTape rollout_with_tape(const nets::NetFamily& family, const model::FbsdeProblem& problem,
                              const PathBatch& batch, int threads = 1);

/// Exact reverse-mode gradient of the recorded loss over [y0, all net
/// parameters]; bitwise deterministic given the same family and tape.
Vec backprop_params(const nets::NetFamily& family, const RolloutTape& tape, int threads = 1);

struct TrainConfig {
    enum class Optimizer { Sgd, Adam };
    Optimizer optimizer = Optimizer::Adam;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    int batch = 256;
    int iterations = 2000;
    double grad_clip = 10.0;
    uint64_t master_seed = 1;
    int threads = 1;
};

struct TrainedSolver {
    nets::NetFamily family;
    std::vector<double> loss_history;
};

/// Fresh path batch per iteration (seed split off master and the iteration
/// index), rollout with tape, optimizer update. Deterministic per config.
TrainedSolver train(const model::FbsdeProblem& problem, const TimeGrid& grid,
                    const TrainConfig& config, nets::NetFamily family);

/// Small-jump truncation: the diffusion absorbs the small jumps through
/// sigma_eps(x) = sigma(x) + gamma(x) sqrt(Sigma_eps); the measure keeps the
/// big jumps only. All downstream operations accept the truncated problem
/// unchanged.
struct EpsilonPipeline {
    double epsilon = 0.0;
    model::FbsdeProblem truncated;
    levy::TruncationStats stats;
    double sigma_eps_lipschitz = 0.0;  // K_sigma + K_gamma |sqrt(Sigma_eps)|
};

EpsilonPipeline build_epsilon_pipeline(const model::FbsdeProblem& problem, double epsilon,
                                       bool allow_finite = false);

/// Strong-error oracle: simulates fine paths (fine_factor sub-steps per
/// interval), builds the coarse Euler path from the aggregated increments and
/// returns, per interval, the mean of sup over fine sub-times of
/// |X_fine - X_coarse_n|^2. Streams paths, never materializes the fine batch.
Vec euler_coupling_error(const model::FbsdeProblem& problem, const TimeGrid& coarse,
                         int fine_factor, int B, uint64_t master_seed, int threads = 1);

}  // namespace jbsde::solver
