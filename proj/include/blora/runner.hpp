// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "blora/config.hpp"

namespace blora {

// Executes a validated configuration: runs the mode and writes every
// artifact (manifest, metrics, history, reliability bins, Pareto table,
// checkpoint) under cfg.out. Throws on failure.
void run_experiment(const RunConfig& cfg);

// Outcome of a full config-file run. exit_code 0 means success; 2 means the
// configuration was rejected (error_json lists each violation); 1 means the
// run itself failed. error_json is a machine-readable record, empty on
// success.
struct RunReport {
  int exit_code = 0;
  std::string error_json;
};

RunReport run_from_file(const std::string& config_path,
                        const ConfigOverrides& overrides = {});

}  // namespace blora
