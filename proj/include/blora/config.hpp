// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blora/layer.hpp"
#include "blora/toybench.hpp"
#include "blora/trainer.hpp"

namespace blora {

// One key-value assignment from a sectioned text config.
struct IniEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

// Parses "[section]" headers and "key = value" lines; '#' and ';' start
// comments. Syntax problems raise a usage error listing every bad line.
std::vector<IniEntry> parse_ini(const std::string& text);

// Command-line overrides applied on top of the file before validation.
struct ConfigOverrides {
  std::optional<std::string> mode;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;  // replaces the whole seed list
};

// Fully resolved experiment description. Defaults reproduce the reference
// training and adapter settings at toy scale.
struct RunConfig {
  std::string mode;  // train | eval | sweep-samples | hpo | map-recovery | ablate-flow | ablate-rank
  std::string out = "out";
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string method = "bayes_lora";  // bayes_lora | map_lora | degenerate

  SyntheticTask task;
  int hidden = 32;
  BayesLoraConfig layer;
  TrainConfig train;
  int eval_samples = 4;

  std::string checkpoint;  // input for mode eval

  std::vector<int> sweep_samples = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> ablate_depths = {0, 1, 2, 4};
  std::vector<int> ablate_inducing_sides = {2, 3, 4};

  int hpo_init_rounds = 4;
  int hpo_rounds = 8;
  int hpo_candidate_budget = 64;
  int hpo_draws = 16;
  double hpo_ref_margin = 0.1;
  double hpo_acc_floor = 0.5;
};

// Parses, applies overrides, and validates. Rejected configs raise a usage
// error whose message carries one "field: problem" line per violation, all
// collected in a single pass.
RunConfig load_run_config(const std::string& text, const ConfigOverrides& overrides = {});

// The resolved configuration as pretty-printed JSON for the manifest.
std::string resolved_config_json(const RunConfig& cfg);

}  // namespace blora
