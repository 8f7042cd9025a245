#include "jbsde/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "jbsde/certify.hpp"
#include "jbsde/nets.hpp"
#include "jbsde/reference.hpp"

namespace jbsde::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw JbsdeError("cannot write " + path.string());
    out << text;
}

/// A command is a no-op when its completion marker carries the same config
/// hash; --force recomputes.
bool completed(const fs::path& marker, const std::string& hash) {
    std::ifstream in(marker);
    if (!in) return false;
    try {
        json j;
        in >> j;
        return j.value("config_hash", "") == hash;
    } catch (...) {
        return false;
    }
}

std::vector<int> net_dims(const config::ExperimentConfig& cfg) {
    const int d = cfg.problem.d;
    const int width = cfg.net.hidden_width > 0 ? cfg.net.hidden_width : d + 10;
    std::vector<int> dims{d};
    for (int l = 0; l < cfg.net.hidden_layers; ++l) dims.push_back(width);
    dims.push_back(1);
    return dims;
}

nets::Activation activation_of(const config::ExperimentConfig& cfg) {
    return cfg.net.activation == "tanh" ? nets::Activation::Tanh : nets::Activation::Sigmoid;
}

struct PreparedRun {
    model::ManufacturedSolution ms;
    model::FbsdeProblem run_problem;  // truncated when the measure has infinite activity
    std::optional<solver::EpsilonPipeline> pipeline;
};

PreparedRun prepare(const config::ExperimentConfig& cfg, std::optional<double> eps = {}) {
    PreparedRun pr{config::build_problem(cfg.problem), {}, {}};
    if (!pr.ms.problem.measure.finite_activity()) {
        double level;
        if (eps)
            level = *eps;
        else if (!cfg.epsilon_list.empty())
            level = cfg.epsilon_list.front();
        else
            throw ConfigError(
                "problem has an infinite-activity measure: supply epsilon_list for truncation");
        pr.pipeline = solver::build_epsilon_pipeline(pr.ms.problem, level);
        pr.run_problem = pr.pipeline->truncated;
    } else {
        pr.run_problem = pr.ms.problem;
    }
    return pr;
}

double slope_fit(const std::vector<double>& dts, const std::vector<double>& errs) {
    // least-squares slope of log(err) against log(dt)
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (size_t i = 0; i < dts.size(); ++i) {
        if (!(errs[i] > 0.0)) continue;
        const double x = std::log(dts[i]), y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n < 2) return std::nan("");
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

certify::CertificateOptions certificate_options(const config::ExperimentConfig& cfg) {
    certify::CertificateOptions co;
    co.lambda_sq_override = cfg.certificate.lambda_sq;
    co.lambdabar_override = cfg.certificate.lambdabar;
    co.f1_coefficient = cfg.certificate.f1_coefficient;
    co.fitted_path_constant = cfg.certificate.fitted_path_constant;
    co.eval_batch = cfg.eval_batch;
    return co;
}

}  // namespace

int cmd_train(const config::ExperimentConfig& cfg, bool force) {
    const std::string hash = hash_hex(config::config_hash(cfg));
    const fs::path dir(cfg.output_dir);
    if (!force && completed(dir / "metrics.json", hash)) {
        std::cout << "train: output already present for config " << hash << ", nothing to do\n";
        return 0;
    }
    fs::create_directories(dir);
    const auto t_start = std::chrono::steady_clock::now();

    PreparedRun pr = prepare(cfg);
    const int M = cfg.M_list.front();
    const solver::TimeGrid grid{M, pr.run_problem.T};
    nets::NetFamily family =
        nets::init_family(M, net_dims(cfg), activation_of(cfg), seed_mix(cfg.seed, 0x696e6974u));
    solver::TrainedSolver trained = solver::train(pr.run_problem, grid, cfg.train, family);

    std::ostringstream csv;
    csv << "# config_hash=" << hash << " seed=" << cfg.seed << "\n";
    csv << "iter,loss\n";
    for (size_t i = 0; i < trained.loss_history.size(); ++i)
        csv << i << "," << fmt(trained.loss_history[i]) << "\n";
    write_text(dir / "loss_history.csv", csv.str());

    nets::save_checkpoint((dir / "checkpoint.bin").string(), trained.family, cfg.seed);
    {
        json snapshot;
        snapshot["config_hash"] = hash;
        snapshot["seed"] = cfg.seed;
        snapshot["config"] = json::parse(config::canonical_json(cfg));
        write_text(dir / "config_snapshot.json", snapshot.dump(2) + "\n");
    }

    const solver::PathBatch eval_batch = solver::simulate_forward(
        pr.run_problem, grid, cfg.eval_batch, cfg.seed, 0xe7a1u, cfg.threads);
    const solver::RolloutResult eval_roll =
        solver::rollout(trained.family, pr.run_problem, eval_batch, false, cfg.threads);
    const model::ExactTriple e0 = pr.ms.exact_triple(0.0, pr.ms.problem.x0);

    json metrics;
    metrics["config_hash"] = hash;
    metrics["seed"] = cfg.seed;
    metrics["M"] = M;
    metrics["iterations"] = cfg.train.iterations;
    metrics["final_train_loss"] =
        trained.loss_history.empty() ? 0.0 : trained.loss_history.back();
    metrics["eval_loss"] = eval_roll.loss;
    metrics["y0_estimate"] = trained.family.y0;
    metrics["y0_exact"] = e0.y;
    metrics["epsilon"] = pr.pipeline ? json(pr.pipeline->epsilon) : json();
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    write_text(dir / "timing.log", "wall_seconds=" + fmt(secs) + "\n");
    std::cout << "train: y0=" << trained.family.y0 << " exact=" << e0.y
              << " eval_loss=" << eval_roll.loss << " -> " << dir.string() << "\n";
    return 0;
}

int cmd_convergence(const config::ExperimentConfig& cfg, bool force) {
    const std::string hash = hash_hex(config::config_hash(cfg));
    const fs::path dir(cfg.output_dir);
    if (!force && completed(dir / "convergence_done.json", hash)) {
        std::cout << "convergence: output already present for config " << hash << "\n";
        return 0;
    }
    fs::create_directories(dir);

    model::ManufacturedSolution ms = config::build_problem(cfg.problem);
    if (!ms.problem.measure.finite_activity())
        throw ConfigError(
            "convergence study needs a finite-activity problem (the exact reference is only "
            "tabulated there); run epsilon-study instead");

    const reference::RegressionBasis basis(ms.problem.d, cfg.basis_degree);
    std::vector<double> dts;
    std::vector<std::array<double, 9>> rows;  // oracle 4 + y0err + deep 4

    for (int M : cfg.M_list) {
        const solver::TimeGrid grid{M, ms.problem.T};
        const solver::PathBatch batch = solver::simulate_forward(
            ms.problem, grid, cfg.eval_batch, cfg.seed, 0xc0feu, cfg.threads);
        const reference::BackwardSolution back =
            reference::solve_backward(ms.problem, grid, batch, basis);
        const reference::ExactOnBatch exact =
            reference::exact_on_batch(ms, ms.problem, batch, grid);
        const reference::DiscreteSolutionView back_view{nullptr, back.Y.data(), back.Z.data(),
                                                        back.Psi.data()};
        const reference::ErrorFunctional ef =
            reference::error_functional(back_view, exact.view(), batch, grid);
        const double y0_exact = ms.exact_triple(0.0, ms.problem.x0).y;
        const double y0_err = std::abs(back.y0() - y0_exact);

        std::array<double, 9> row{ef.errX, ef.errY, ef.errZ, ef.errPsi, y0_err,
                                  std::nan(""), std::nan(""), std::nan(""), std::nan("")};
        if (cfg.train.iterations > 0) {
            nets::NetFamily family = nets::init_family(
                M, net_dims(cfg), activation_of(cfg), seed_mix(cfg.seed, 0x696e6974u));
            const solver::TrainedSolver trained =
                solver::train(ms.problem, grid, cfg.train, family);
            const solver::RolloutResult roll =
                solver::rollout(trained.family, ms.problem, batch, true, cfg.threads);
            const reference::DiscreteSolutionView deep_view{nullptr, roll.Y.data(), roll.Z.data(),
                                                            roll.Psi.data()};
            const reference::ErrorFunctional efd =
                reference::error_functional(deep_view, exact.view(), batch, grid);
            row[5] = efd.errX;
            row[6] = efd.errY;
            row[7] = efd.errZ;
            row[8] = efd.errPsi;
        }
        rows.push_back(row);
        dts.push_back(grid.dt());

        // per-step coefficient tables of the backward oracle
        std::ostringstream ct;
        ct << "# config_hash=" << hash << " seed=" << cfg.seed << "\n";
        ct << "n,condition,ridge_flagged";
        for (int p = 0; p < basis.size(); ++p) ct << ",coef_y_" << p;
        for (int i = 0; i < ms.problem.d; ++i)
            for (int p = 0; p < basis.size(); ++p) ct << ",coef_z_" << i << "_" << p;
        for (int p = 0; p < basis.size(); ++p) ct << ",coef_psi_" << p;
        ct << "\n";
        for (int n = 0; n < M; ++n) {
            const reference::StepRegression& st = back.steps[n];
            ct << n << "," << fmt(st.condition) << "," << (st.ridge_flagged ? 1 : 0);
            for (int p = 0; p < basis.size(); ++p) ct << "," << fmt(st.coef_y[p]);
            for (int i = 0; i < ms.problem.d; ++i)
                for (int p = 0; p < basis.size(); ++p) ct << "," << fmt(st.coef_z(i, p));
            for (int p = 0; p < basis.size(); ++p) ct << "," << fmt(st.coef_psi[p]);
            ct << "\n";
        }
        write_text(dir / ("coeffs_M" + std::to_string(M) + ".csv"), ct.str());
    }

    std::ostringstream csv;
    csv << "# config_hash=" << hash << " seed=" << cfg.seed << "\n";
    csv << "M,dt,errX,errY,errZ,errPsi,oracle_y0_abs_err,deep_errX,deep_errY,deep_errZ,deep_"
           "errPsi\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        csv << cfg.M_list[i] << "," << fmt(dts[i]);
        for (double v : rows[i]) csv << "," << fmt(v);
        csv << "\n";
    }
    if (rows.size() >= 2) {
        csv << "slope,";
        for (int c = 0; c < 9; ++c) {
            std::vector<double> col;
            for (const auto& r : rows) col.push_back(r[c]);
            csv << "," << fmt(slope_fit(dts, col));
        }
        csv << "\n";
    }
    write_text(dir / "convergence.csv", csv.str());

    json done;
    done["config_hash"] = hash;
    write_text(dir / "convergence_done.json", done.dump(2) + "\n");
    std::cout << "convergence: wrote " << (dir / "convergence.csv").string() << "\n";
    return 0;
}

int cmd_certify(const config::ExperimentConfig& cfg, const std::string& checkpoint_path,
                bool force) {
    const std::string hash = hash_hex(config::config_hash(cfg));
    const fs::path dir(cfg.output_dir);
    const fs::path ckpt =
        checkpoint_path.empty() ? dir / "checkpoint.bin" : fs::path(checkpoint_path);
    if (!fs::exists(ckpt)) throw ConfigError("checkpoint not found: " + ckpt.string());
    if (!force && completed(dir / "certificate_done.json", hash)) {
        std::cout << "certify: output already present for config " << hash << "\n";
        return 0;
    }
    fs::create_directories(dir);

    nets::NetFamily family = nets::load_checkpoint(ckpt.string());
    const int M = static_cast<int>(family.nets.size());
    PreparedRun pr = prepare(cfg);
    const solver::TimeGrid grid{M, pr.run_problem.T};

    certify::Certificate cert;
    if (pr.pipeline)
        cert = certify::epsilon_certificate(family, *pr.pipeline, grid,
                                            seed_mix(cfg.seed, 0xce27u), certificate_options(cfg));
    else
        cert = certify::posteriori_certificate(family, pr.run_problem, grid,
                                               seed_mix(cfg.seed, 0xce27u),
                                               certificate_options(cfg));

    std::string body = certify::certificate_to_json(cert);
    // embed the run identity
    json j = json::parse(body);
    j["config_hash"] = hash;
    j["seed"] = cfg.seed;
    write_text(dir / "certificate.json", j.dump(2) + "\n");
    json done;
    done["config_hash"] = hash;
    write_text(dir / "certificate_done.json", done.dump(2) + "\n");
    std::cout << "certify: bound=" << cert.bound_value << " loss=" << cert.loss << "+-"
              << cert.loss_ci << " C=" << cert.constant << "\n";
    return 0;
}

int cmd_epsilon_study(const config::ExperimentConfig& cfg, bool force) {
    const std::string hash = hash_hex(config::config_hash(cfg));
    const fs::path dir(cfg.output_dir);
    if (!force && completed(dir / "epsilon_study_done.json", hash)) {
        std::cout << "epsilon-study: output already present for config " << hash << "\n";
        return 0;
    }
    if (cfg.epsilon_list.empty())
        throw ConfigError("epsilon-study needs a nonempty epsilon_list");
    model::ManufacturedSolution ms = config::build_problem(cfg.problem);
    if (ms.problem.measure.finite_activity())
        throw ConfigError("epsilon-study expects an infinite-activity measure");
    fs::create_directories(dir);

    const int M = cfg.M_list.front();
    std::ostringstream csv;
    csv << "# config_hash=" << hash << " seed=" << cfg.seed << "\n";
    csv << "epsilon,K_nu_eps,sigma_eps_trace,y0_estimate,terminal_loss,c_eps,small_jump_"
           "remainder\n";
    for (size_t i = 0; i < cfg.epsilon_list.size(); ++i) {
        const double eps = cfg.epsilon_list[i];
        const solver::EpsilonPipeline pipe = solver::build_epsilon_pipeline(ms.problem, eps);
        const solver::TimeGrid grid{M, pipe.truncated.T};
        nets::NetFamily family = nets::init_family(
            M, net_dims(cfg), activation_of(cfg), seed_mix(cfg.seed, 0x696e6974u));
        const solver::TrainedSolver trained =
            solver::train(pipe.truncated, grid, cfg.train, family);
        nets::save_checkpoint((dir / ("checkpoint_eps" + std::to_string(i) + ".bin")).string(),
                              trained.family, cfg.seed);

        const solver::PathBatch eval_batch = solver::simulate_forward(
            pipe.truncated, grid, cfg.eval_batch, cfg.seed, 0xe7a1u, cfg.threads);
        const solver::RolloutResult roll =
            solver::rollout(trained.family, pipe.truncated, eval_batch, false, cfg.threads);

        const double K_nu_eps = pipe.truncated.measure.total_mass();
        double c_eps = std::nan("");
        try {
            c_eps = certify::minimize_posteriori(pipe.truncated.constants.K_f, K_nu_eps,
                                                 pipe.truncated.T, grid.dt(),
                                                 cfg.certificate.f1_coefficient)
                        .constant;
        } catch (const certify::InfeasibleError&) {
        }
        const double remainder =
            ms.problem.measure.second_moment(levy::Region::Ball, eps);
        double trace = 0.0;
        for (int k = 0; k < pipe.stats.sigma_eps.rows; ++k) trace += pipe.stats.sigma_eps(k, k);

        csv << fmt(eps) << "," << fmt(K_nu_eps) << "," << fmt(trace) << ","
            << fmt(trained.family.y0) << "," << fmt(roll.loss) << "," << fmt(c_eps) << ","
            << fmt(remainder) << "\n";
    }
    write_text(dir / "epsilon_study.csv", csv.str());
    json done;
    done["config_hash"] = hash;
    write_text(dir / "epsilon_study_done.json", done.dump(2) + "\n");
    std::cout << "epsilon-study: wrote " << (dir / "epsilon_study.csv").string() << "\n";
    return 0;
}

int cmd_validate(const config::ExperimentConfig& cfg) {
    model::ManufacturedSolution ms = config::build_problem(cfg.problem);
    const model::ValidationReport report = model::validate(ms);
    for (const auto& c : report.checks)
        std::cout << (c.pass ? "pass" : "FAIL") << "  " << c.name
                  << "  worst_ratio=" << c.worst_ratio << "\n";
    if (!report.all_pass()) {
        std::cout << "validate: FAILED\n";
        return 3;
    }
    std::cout << "validate: all checks passed\n";
    return 0;
}

}  // namespace jbsde::cli
