// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "blora/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bayesian low-rank adapter experiments"};
  std::string config_path;
  std::string mode;
  std::string out;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "Path to the experiment config file")
      ->required();
  CLI::Option* mode_opt =
      app.add_option("--mode", mode,
                     "Override the run mode (train | eval | sweep-samples | hpo | "
                     "map-recovery | ablate-flow | ablate-rank)");
  CLI::Option* out_opt = app.add_option("--out", out, "Override the output directory");
  CLI::Option* seed_opt =
      app.add_option("--seed", seed, "Override the seed list with a single seed");
  CLI11_PARSE(app, argc, argv);

  blora::ConfigOverrides overrides;
  if (*mode_opt) overrides.mode = mode;
  if (*out_opt) overrides.out = out;
  if (*seed_opt) overrides.seed = seed;

  const blora::RunReport report = blora::run_from_file(config_path, overrides);
  if (!report.error_json.empty()) std::cerr << report.error_json << std::endl;
  return report.exit_code;
}
