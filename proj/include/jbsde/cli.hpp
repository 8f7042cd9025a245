#pragma once

#include <string>

#include "jbsde/config.hpp"

namespace jbsde::cli {

/// Exit code 0 on success; throws ConfigError (exit 2 at main) or a numeric
/// JbsdeError (exit 3 at main).
int cmd_train(const config::ExperimentConfig& cfg, bool force);
int cmd_convergence(const config::ExperimentConfig& cfg, bool force);
int cmd_certify(const config::ExperimentConfig& cfg, const std::string& checkpoint_path,
                bool force);
int cmd_epsilon_study(const config::ExperimentConfig& cfg, bool force);
int cmd_validate(const config::ExperimentConfig& cfg);

}  // namespace jbsde::cli
