// SPDX-License-Identifier: Apache-2.0
#include "blora/config.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <json.hpp>

#include "blora/error.hpp"

namespace blora {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Accumulates "field: problem" lines and typed value parsing against them.
class Violations {
 public:
  void add(const std::string& field, const std::string& problem) {
    lines_.push_back(field + ": " + problem);
  }

  bool empty() const { return lines_.empty(); }

  std::string message() const {
    std::string out = "invalid configuration";
    for (const std::string& l : lines_) out += "\n" + l;
    return out;
  }

  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::vector<std::string> lines_;
};

bool parse_double(const std::string& raw, double* out) {
  std::size_t used = 0;
  try {
    *out = std::stod(raw, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == raw.size();
}

bool parse_int(const std::string& raw, int* out) {
  std::size_t used = 0;
  try {
    long v = std::stol(raw, &used);
    if (used != raw.size()) return false;
    if (v < -2147483647l || v > 2147483647l) return false;
    *out = static_cast<int>(v);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

bool parse_u64(const std::string& raw, std::uint64_t* out) {
  std::size_t used = 0;
  try {
    *out = std::stoull(raw, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == raw.size() && raw.find('-') == std::string::npos;
}

bool parse_bool(const std::string& raw, bool* out) {
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") {
    *out = true;
    return true;
  }
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off") {
    *out = false;
    return true;
  }
  return false;
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

}  // namespace

std::vector<IniEntry> parse_ini(const std::string& text) {
  std::vector<IniEntry> entries;
  Violations bad;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::size_t comment = raw.find_first_of("#;");
    if (comment != std::string::npos) raw = raw.substr(0, comment);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) {
        bad.add("line " + std::to_string(line), "malformed section header");
        continue;
      }
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      bad.add("line " + std::to_string(line), "expected key = value");
      continue;
    }
    IniEntry e;
    e.section = section;
    e.key = trim(s.substr(0, eq));
    e.value = trim(s.substr(eq + 1));
    e.line = line;
    if (e.key.empty()) {
      bad.add("line " + std::to_string(line), "empty key");
      continue;
    }
    entries.push_back(std::move(e));
  }
  if (!bad.empty()) throw UsageError(bad.message());
  return entries;
}

RunConfig load_run_config(const std::string& text, const ConfigOverrides& overrides) {
  const std::vector<IniEntry> entries = parse_ini(text);
  RunConfig cfg;
  Violations bad;
  bool mode_given = false;

  // Typed setters keyed by "section.key". A setter throws ParameterError to
  // report a value problem; the driver attaches the field name.
  std::map<std::string, std::function<void(const std::string&)>> setters;
  auto set_double = [&](const char* field, double* dst) {
    setters[field] = [dst](const std::string& raw) {
      double v;
      if (!parse_double(raw, &v)) throw ParameterError("not a number");
      *dst = v;
    };
  };
  auto set_int = [&](const char* field, int* dst) {
    setters[field] = [dst](const std::string& raw) {
      int v;
      if (!parse_int(raw, &v)) throw ParameterError("not an integer");
      *dst = v;
    };
  };
  auto set_bool = [&](const char* field, bool* dst) {
    setters[field] = [dst](const std::string& raw) {
      bool v;
      if (!parse_bool(raw, &v)) throw ParameterError("not a boolean");
      *dst = v;
    };
  };
  auto set_string = [&](const char* field, std::string* dst) {
    setters[field] = [dst](const std::string& raw) {
      if (raw.empty()) throw ParameterError("empty value");
      *dst = raw;
    };
  };
  auto set_int_list = [&](const char* field, std::vector<int>* dst) {
    setters[field] = [dst](const std::string& raw) {
      std::vector<int> out;
      for (const std::string& item : split_list(raw)) {
        int v;
        if (!parse_int(item, &v)) throw ParameterError("not an integer list");
        out.push_back(v);
      }
      if (out.empty()) throw ParameterError("empty list");
      *dst = std::move(out);
    };
  };

  setters["run.mode"] = [&](const std::string& raw) {
    cfg.mode = raw;
    mode_given = true;
  };
  set_string("run.out", &cfg.out);
  setters["run.seeds"] = [&](const std::string& raw) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(raw)) {
      std::uint64_t v;
      if (!parse_u64(item, &v)) throw ParameterError("not a seed list");
      out.push_back(v);
    }
    if (out.empty()) throw ParameterError("empty list");
    cfg.seeds = std::move(out);
  };
  set_string("run.method", &cfg.method);
  set_int("run.eval_samples", &cfg.eval_samples);

  set_int("task.classes", &cfg.task.n_classes);
  set_int("task.dim", &cfg.task.input_dim);
  set_int("task.hidden", &cfg.hidden);
  set_int("task.n_pretrain", &cfg.task.n_pretrain);
  set_int("task.n_train", &cfg.task.n_train);
  set_int("task.n_val", &cfg.task.n_val);
  set_int("task.n_test", &cfg.task.n_test);
  set_double("task.mean_scale", &cfg.task.mean_scale);
  set_double("task.noise_sd", &cfg.task.noise_sd);
  set_double("task.shift_angle", &cfg.task.shift_angle_deg);
  set_double("task.shift_mean", &cfg.task.shift_mean);
  setters["task.seed"] = [&](const std::string& raw) {
    std::uint64_t v;
    if (!parse_u64(raw, &v)) throw ParameterError("not a seed");
    cfg.task.seed = v;
  };

  set_int("lora.rank", &cfg.layer.lora_rank);
  set_double("lora.alpha", &cfg.layer.alpha);
  set_int("lora.inducing_rows", &cfg.layer.inducing_rows);
  set_int("lora.inducing_cols", &cfg.layer.inducing_cols);
  set_int("lora.flow_depth", &cfg.layer.flow_depth);
  set_bool("lora.whitened", &cfg.layer.whitened);
  set_double("lora.max_sd_u", &cfg.layer.max_sd_u);
  set_double("lora.init_lambda", &cfg.layer.init_lambda);
  set_double("lora.max_lambda", &cfg.layer.max_lambda);
  set_double("lora.prior_sd", &cfg.layer.prior_sd);
  set_bool("lora.sqrt_width_scaling", &cfg.layer.sqrt_width_scaling);
  set_double("lora.init_d", &cfg.layer.init_d);
  set_double("lora.init_m_sd", &cfg.layer.init_m_sd);

  set_double("train.learning_rate", &cfg.train.learning_rate);
  set_double("train.weight_decay", &cfg.train.weight_decay);
  set_double("train.beta1", &cfg.train.beta1);
  set_double("train.beta2", &cfg.train.beta2);
  set_double("train.epsilon", &cfg.train.epsilon);
  set_int("train.epochs", &cfg.train.epochs);
  set_int("train.batch_size", &cfg.train.batch_size);
  set_int("train.mc_train", &cfg.train.mc_train);
  set_int("train.mc_eval", &cfg.train.mc_eval);
  set_double("train.kl_scale", &cfg.train.kl_scale_base);
  set_bool("train.scale_kl_w", &cfg.train.scale_kl_w);
  set_double("train.label_smoothing", &cfg.train.label_smoothing);
  set_int("train.eval_every", &cfg.train.eval_every);
  set_double("train.grad_clip", &cfg.train.grad_clip);
  set_int_list("train.milestones", &cfg.train.milestones);
  set_double("train.lr_decay", &cfg.train.lr_decay);

  set_string("eval.checkpoint", &cfg.checkpoint);

  set_int_list("sweep.samples", &cfg.sweep_samples);

  set_int_list("ablate.depths", &cfg.ablate_depths);
  set_int_list("ablate.inducing_sides", &cfg.ablate_inducing_sides);

  set_int("hpo.init_rounds", &cfg.hpo_init_rounds);
  set_int("hpo.rounds", &cfg.hpo_rounds);
  set_int("hpo.candidate_budget", &cfg.hpo_candidate_budget);
  set_int("hpo.draws", &cfg.hpo_draws);
  set_double("hpo.ref_margin", &cfg.hpo_ref_margin);
  set_double("hpo.acc_floor", &cfg.hpo_acc_floor);

  static const std::set<std::string> known_sections = {"run",   "task",  "lora", "train",
                                                       "eval",  "sweep", "ablate", "hpo"};
  std::set<std::string> seen;
  for (const IniEntry& e : entries) {
    const std::string field = e.section.empty() ? e.key : e.section + "." + e.key;
    if (!known_sections.count(e.section)) {
      bad.add(field, "unknown section");
      continue;
    }
    auto it = setters.find(field);
    if (it == setters.end()) {
      bad.add(field, "unknown key");
      continue;
    }
    if (!seen.insert(field).second) {
      bad.add(field, "duplicate key");
      continue;
    }
    try {
      it->second(e.value);
    } catch (const ParameterError& err) {
      bad.add(field, std::string(err.what()) + " (got \"" + e.value + "\")");
    }
  }

  if (overrides.mode) {
    cfg.mode = *overrides.mode;
    mode_given = true;
  }
  if (overrides.out) cfg.out = *overrides.out;
  if (overrides.seed) cfg.seeds = {*overrides.seed};

  static const std::set<std::string> modes = {"train",        "eval",       "sweep-samples",
                                              "hpo",          "map-recovery", "ablate-flow",
                                              "ablate-rank"};
  if (!mode_given || cfg.mode.empty())
    bad.add("run.mode", "required field is missing");
  else if (!modes.count(cfg.mode))
    bad.add("run.mode", "unknown mode \"" + cfg.mode + "\"");

  static const std::set<std::string> methods = {"bayes_lora", "map_lora", "degenerate"};
  if (!methods.count(cfg.method)) bad.add("run.method", "unknown method \"" + cfg.method + "\"");

  if (cfg.out.empty()) bad.add("run.out", "required field is missing");
  if (cfg.seeds.empty()) bad.add("run.seeds", "empty list");
  if (cfg.eval_samples < 1) bad.add("run.eval_samples", "must be at least 1");

  if (cfg.task.n_classes < 2) bad.add("task.classes", "must be at least 2");
  if (cfg.task.input_dim < 2) bad.add("task.dim", "must be at least 2");
  if (cfg.hidden < 1) bad.add("task.hidden", "must be at least 1");
  if (cfg.task.n_pretrain < 1) bad.add("task.n_pretrain", "must be at least 1");
  if (cfg.task.n_train < 1) bad.add("task.n_train", "must be at least 1");
  if (cfg.task.n_val < 1) bad.add("task.n_val", "must be at least 1");
  if (cfg.task.n_test < 1) bad.add("task.n_test", "must be at least 1");
  if (!(cfg.task.mean_scale > 0.0)) bad.add("task.mean_scale", "must be positive");
  if (!(cfg.task.noise_sd > 0.0)) bad.add("task.noise_sd", "must be positive");
  if (!(cfg.task.shift_mean >= 0.0)) bad.add("task.shift_mean", "must be nonnegative");

  if (cfg.layer.lora_rank < 1) bad.add("lora.rank", "must be at least 1");
  if (!(cfg.layer.alpha > 0.0)) bad.add("lora.alpha", "must be positive");
  if (cfg.layer.inducing_rows < 1) bad.add("lora.inducing_rows", "must be at least 1");
  if (cfg.layer.inducing_cols < 1) bad.add("lora.inducing_cols", "must be at least 1");
  if (cfg.layer.flow_depth < 0) bad.add("lora.flow_depth", "must be nonnegative");
  if (!(cfg.layer.max_sd_u > 0.0)) bad.add("lora.max_sd_u", "must be positive");
  if (!(cfg.layer.max_lambda > 0.0)) bad.add("lora.max_lambda", "must be positive");
  if (!(cfg.layer.init_lambda > 0.0)) bad.add("lora.init_lambda", "must be positive");
  if (!(cfg.layer.prior_sd > 0.0)) bad.add("lora.prior_sd", "must be positive");

  if (!(cfg.train.learning_rate > 0.0)) bad.add("train.learning_rate", "must be positive");
  if (!(cfg.train.weight_decay >= 0.0)) bad.add("train.weight_decay", "must be nonnegative");
  if (cfg.train.epochs < 0) bad.add("train.epochs", "must be nonnegative");
  if (cfg.train.batch_size < 1) bad.add("train.batch_size", "must be at least 1");
  if (cfg.train.mc_train < 1) bad.add("train.mc_train", "must be at least 1");
  if (cfg.train.mc_eval < 1) bad.add("train.mc_eval", "must be at least 1");
  if (!(cfg.train.label_smoothing >= 0.0 && cfg.train.label_smoothing < 1.0))
    bad.add("train.label_smoothing", "must lie in [0, 1)");
  if (cfg.train.eval_every < 1) bad.add("train.eval_every", "must be at least 1");
  if (!(cfg.train.grad_clip > 0.0)) bad.add("train.grad_clip", "must be positive");
  if (!(cfg.train.lr_decay > 0.0)) bad.add("train.lr_decay", "must be positive");

  if (cfg.mode == "eval" && cfg.checkpoint.empty())
    bad.add("eval.checkpoint", "required field is missing");

  for (int s : cfg.sweep_samples)
    if (s < 1) {
      bad.add("sweep.samples", "entries must be at least 1");
      break;
    }
  for (int d : cfg.ablate_depths)
    if (d < 0) {
      bad.add("ablate.depths", "entries must be nonnegative");
      break;
    }
  for (int s : cfg.ablate_inducing_sides)
    if (s < 1) {
      bad.add("ablate.inducing_sides", "entries must be at least 1");
      break;
    }

  if (cfg.hpo_init_rounds < 1) bad.add("hpo.init_rounds", "must be at least 1");
  if (cfg.hpo_rounds < 0) bad.add("hpo.rounds", "must be nonnegative");
  if (cfg.hpo_candidate_budget < 1) bad.add("hpo.candidate_budget", "must be at least 1");
  if (cfg.hpo_draws < 1) bad.add("hpo.draws", "must be at least 1");
  if (!(cfg.hpo_ref_margin >= 0.0)) bad.add("hpo.ref_margin", "must be nonnegative");
  if (!(cfg.hpo_acc_floor >= 0.0 && cfg.hpo_acc_floor <= 1.0))
    bad.add("hpo.acc_floor", "must lie in [0, 1]");

  if (!bad.empty()) throw UsageError(bad.message());
  return cfg;
}

std::string resolved_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["run"] = {{"mode", cfg.mode},
              {"out", cfg.out},
              {"seeds", cfg.seeds},
              {"method", cfg.method},
              {"eval_samples", cfg.eval_samples}};
  j["task"] = {{"classes", cfg.task.n_classes},
               {"dim", cfg.task.input_dim},
               {"hidden", cfg.hidden},
               {"n_pretrain", cfg.task.n_pretrain},
               {"n_train", cfg.task.n_train},
               {"n_val", cfg.task.n_val},
               {"n_test", cfg.task.n_test},
               {"mean_scale", cfg.task.mean_scale},
               {"noise_sd", cfg.task.noise_sd},
               {"shift_angle", cfg.task.shift_angle_deg},
               {"shift_mean", cfg.task.shift_mean},
               {"seed", cfg.task.seed}};
  j["lora"] = {{"rank", cfg.layer.lora_rank},
               {"alpha", cfg.layer.alpha},
               {"inducing_rows", cfg.layer.inducing_rows},
               {"inducing_cols", cfg.layer.inducing_cols},
               {"flow_depth", cfg.layer.flow_depth},
               {"whitened", cfg.layer.whitened},
               {"max_sd_u", cfg.layer.max_sd_u},
               {"init_lambda", cfg.layer.init_lambda},
               {"max_lambda", cfg.layer.max_lambda},
               {"prior_sd", cfg.layer.prior_sd},
               {"sqrt_width_scaling", cfg.layer.sqrt_width_scaling},
               {"init_d", cfg.layer.init_d},
               {"init_m_sd", cfg.layer.init_m_sd}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"epsilon", cfg.train.epsilon},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"mc_train", cfg.train.mc_train},
                {"mc_eval", cfg.train.mc_eval},
                {"kl_scale", cfg.train.kl_scale_base},
                {"scale_kl_w", cfg.train.scale_kl_w},
                {"label_smoothing", cfg.train.label_smoothing},
                {"eval_every", cfg.train.eval_every},
                {"grad_clip", cfg.train.grad_clip},
                {"milestones", cfg.train.milestones},
                {"lr_decay", cfg.train.lr_decay}};
  if (!cfg.checkpoint.empty()) j["eval"] = {{"checkpoint", cfg.checkpoint}};
  j["sweep"] = {{"samples", cfg.sweep_samples}};
  j["ablate"] = {{"depths", cfg.ablate_depths},
                 {"inducing_sides", cfg.ablate_inducing_sides}};
  j["hpo"] = {{"init_rounds", cfg.hpo_init_rounds},
              {"rounds", cfg.hpo_rounds},
              {"candidate_budget", cfg.hpo_candidate_budget},
              {"draws", cfg.hpo_draws},
              {"ref_margin", cfg.hpo_ref_margin},
              {"acc_floor", cfg.hpo_acc_floor}};
  return j.dump(2);
}

}  // namespace blora
