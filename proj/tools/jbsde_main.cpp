#include <CLI11.hpp>
#include <iostream>

#include "jbsde/cli.hpp"
#include "jbsde/common.hpp"

namespace {

constexpr const char* kCsvDoc =
    "Output columns:\n"
    "  loss_history.csv    iter,loss\n"
    "  convergence.csv     M,dt,errX,errY,errZ,errPsi,oracle_y0_abs_err,\n"
    "                      deep_errX,deep_errY,deep_errZ,deep_errPsi\n"
    "                      (trailing 'slope' row fits log error against log dt)\n"
    "  coeffs_M<M>.csv     n,condition,ridge_flagged,coef_y_*,coef_z_*_*,coef_psi_*\n"
    "  epsilon_study.csv   epsilon,K_nu_eps,sigma_eps_trace,y0_estimate,\n"
    "                      terminal_loss,c_eps,small_jump_remainder\n"
    "Exit codes: 0 success, 2 configuration error, 3 numerical failure.";

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep solver and error certificates for decoupled FBSDEs with jumps"};
    app.footer(kCsvDoc);
    app.require_subcommand(1);

    std::string config_path, checkpoint_path;
    bool force = false;
    int threads = 0;
    std::optional<int> f1_coefficient;

    auto add_common = [&](CLI::App* sub, bool with_force = true) {
        sub->add_option("-c,--config", config_path, "experiment configuration (JSON)")
            ->required();
        if (with_force) sub->add_flag("--force", force, "recompute even if outputs exist");
        sub->add_option("--threads", threads, "cap worker threads (does not change results)");
        sub->add_option("--f1-coefficient", f1_coefficient,
                        "quadratic coefficient in F1 and the bound constant (default 3; "
                        "4 selects the alternative convention)");
    };

    CLI::App* train = app.add_subcommand("train", "train the deep solver, emit run artifacts");
    add_common(train);
    CLI::App* conv = app.add_subcommand(
        "convergence", "error functionals of the backward oracle (and solver) over an M list");
    add_common(conv);
    CLI::App* cert = app.add_subcommand("certify", "evaluate the a posteriori certificate");
    add_common(cert);
    cert->add_option("--checkpoint", checkpoint_path,
                     "trained checkpoint (default: <output_dir>/checkpoint.bin)");
    CLI::App* eps = app.add_subcommand("epsilon-study",
                                       "truncation study over epsilon_list (infinite activity)");
    add_common(eps);
    CLI::App* val = app.add_subcommand("validate", "sampled checks of the declared constants");
    add_common(val, false);

    CLI11_PARSE(app, argc, argv);

    try {
        jbsde::config::ExperimentConfig cfg = jbsde::config::load_config(config_path);
        if (threads > 0) {
            cfg.threads = threads;
            cfg.train.threads = threads;
        }
        if (f1_coefficient) {
            if (*f1_coefficient != 3 && *f1_coefficient != 4)
                throw jbsde::ConfigError("--f1-coefficient must be 3 or 4");
            cfg.certificate.f1_coefficient = *f1_coefficient;
        }
        if (train->parsed()) return jbsde::cli::cmd_train(cfg, force);
        if (conv->parsed()) return jbsde::cli::cmd_convergence(cfg, force);
        if (cert->parsed()) return jbsde::cli::cmd_certify(cfg, checkpoint_path, force);
        if (eps->parsed()) return jbsde::cli::cmd_epsilon_study(cfg, force);
        if (val->parsed()) return jbsde::cli::cmd_validate(cfg);
    } catch (const jbsde::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
