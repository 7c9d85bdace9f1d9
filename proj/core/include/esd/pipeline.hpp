#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "esd/config.hpp"

namespace esd {

/// Stage names accepted by run_pipeline, in execution order.
std::vector<std::string> pipeline_stages(const ExperimentConfig& cfg);

/// Executes the requested stages in order, writing artifacts under cfg.out
/// and a manifest (config echo, stage seeds, output hashes) at the end.
/// Returns the process exit status: 0 on success, 1 on stage failure (the
/// failing stage's partial outputs keep a .partial suffix).
int run_pipeline(const ExperimentConfig& cfg, std::vector<std::string> stages, bool quiet);

/// Full pipeline for the configured experiment.
int run_full(const ExperimentConfig& cfg, bool quiet);

/// Bimodal discretization sweep: e_BGMM against the step counts in
/// cfg.convergence_steps with a fixed set of initial draws. Emits
/// convergence.csv and the manifest; prints the fitted log-log slope.
int run_convergence(const ExperimentConfig& cfg, bool quiet);

/// The nine-row bimodal ablation table (C1-C9). Emits ablation.csv.
int run_ablation(const ExperimentConfig& cfg, bool quiet);

}  // namespace esd
