#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "esd/config.hpp"
#include "esd/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config file (key=value or JSON)")
      ->required();
  cmd->add_option("--seed", flags.seed, "override the top-level seed");
  cmd->add_option("--out", flags.out, "override the output directory");
  cmd->add_option("--threads", flags.threads,
                  "worker threads (0 = all cores; ESD_THREADS overrides)");
  cmd->add_flag("--quiet", flags.quiet, "suppress progress output");
}

esd::ExperimentConfig resolve(const CommonFlags& flags) {
  esd::ExperimentConfig cfg = esd::validate_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out = *flags.out;
  if (flags.threads) cfg.threads = *flags.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exact-score conditional diffusion sampling toolkit"};
  app.require_subcommand(1);

  const std::vector<std::string> stage_names = {"gen-data", "prior", "sample", "label",
                                                "train",    "infer", "eval"};
  std::map<std::string, CommonFlags> stage_flags;
  for (const auto& name : stage_names) {
    auto* cmd = app.add_subcommand(name, "run the '" + name + "' stage");
    add_common(cmd, stage_flags[name]);
  }

  CommonFlags run_flags, conv_flags, abl_flags, check_flags;
  add_common(app.add_subcommand("run", "full pipeline for the configured experiment"),
             run_flags);
  add_common(app.add_subcommand("convergence", "e_BGMM vs. step-count sweep (bimodal)"),
             conv_flags);
  add_common(app.add_subcommand("ablation", "nine-row bimodal KL table"), abl_flags);

  auto* check = app.add_subcommand("check-config", "validate a config and print it resolved");
  add_common(check, check_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& name : stage_names) {
      if (app.got_subcommand(name))
        return esd::run_pipeline(resolve(stage_flags[name]), {name}, stage_flags[name].quiet);
    }
    if (app.got_subcommand("run"))
      return esd::run_full(resolve(run_flags), run_flags.quiet);
    if (app.got_subcommand("convergence"))
      return esd::run_convergence(resolve(conv_flags), conv_flags.quiet);
    if (app.got_subcommand("ablation"))
      return esd::run_ablation(resolve(abl_flags), abl_flags.quiet);
    if (app.got_subcommand("check-config")) {
      std::cout << resolve(check_flags).serialize();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "[esd] error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
