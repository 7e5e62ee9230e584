// SPDX-License-Identifier: Apache-2.0
#include "blora/runner.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <json.hpp>

#include "blora/bo.hpp"
#include "blora/checkpoint.hpp"
#include "blora/error.hpp"
#include "blora/metrics.hpp"
#include "blora/toybench.hpp"
#include "blora/trainer.hpp"

namespace blora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw IoError("short write: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize " + path.string() + ": " + ec.message());
}

// Index-sharded fan-out over independent cells; results must be written to
// per-index slots so scheduling never affects output order.
void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (workers > n) workers = n;
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::unique_ptr<Model> make_method_model(const std::string& method, const MlpBase& base,
                                         const RunConfig& cfg, std::uint64_t seed) {
  if (method == "map_lora")
    return std::make_unique<MapLoraMlp>(base, cfg.layer.lora_rank, cfg.layer.alpha, seed);
  if (method == "degenerate")
    return std::make_unique<BayesLoraMlp>(base, degenerate_of(cfg.layer), seed);
  return std::make_unique<BayesLoraMlp>(base, cfg.layer, seed);
}

int eval_samples_for(const std::string& method, const RunConfig& cfg) {
  return method == "map_lora" ? 1 : cfg.eval_samples;
}

CalibrationReport eval_split(const Model& model, const Batch& data, int s,
                             RandomStream rng) {
  return evaluate(predictions_of(model, data, s, rng));
}

std::string bins_csv(const CalibrationReport& rep) {
  std::string out = "bin,lo,hi,count,confidence,accuracy\n";
  for (int b = 0; b < kEceBins; ++b) {
    const BinStat& s = rep.bins[b];
    out += std::to_string(b + 1) + "," + num(static_cast<double>(b) / kEceBins) + "," +
           num(static_cast<double>(b + 1) / kEceBins) + "," + std::to_string(s.count) +
           "," + num(s.mean_conf) + "," + num(s.mean_acc) + "\n";
  }
  return out;
}

std::string history_jsonl(const TrainResult& res) {
  std::string out;
  for (const EpochRecord& r : res.history) {
    json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["data_term"] = r.mean_breakdown.data_term;
    j["kl_u"] = r.mean_breakdown.kl_u;
    j["kl_w"] = r.mean_breakdown.kl_w;
    j["elbo"] = r.mean_breakdown.elbo;
    j["kl_scale"] = r.mean_breakdown.kl_scale;
    j["lr"] = r.lr;
    j["evaluated"] = r.evaluated;
    if (r.evaluated) {
      j["val_nll"] = r.val_nll;
      j["val_acc"] = r.val_acc;
    }
    out += j.dump() + "\n";
  }
  return out;
}

struct ModeOutput {
  std::vector<std::string> artifacts;
  json extras;
};

ModeOutput mode_train_or_eval(const RunConfig& cfg, const fs::path& out) {
  ModeOutput mo;
  const TaskBundle bundle = make_task(cfg.task);
  const MlpBase base = pretrain_base(bundle, cfg.task.input_dim, cfg.hidden,
                                     cfg.task.n_classes, cfg.task.seed);
  const std::uint64_t seed = cfg.seeds[0];
  std::unique_ptr<Model> model = make_method_model(cfg.method, base, cfg, seed);

  if (cfg.mode == "train") {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const TrainResult res = train(*model, bundle.train, bundle.val, tc);
    save_checkpoint((out / "checkpoint.bin").string(), model->params());
    atomic_write(out / "history.jsonl", history_jsonl(res));
    mo.artifacts.push_back("checkpoint.bin");
    mo.artifacts.push_back("history.jsonl");
    mo.extras["best_epoch"] = res.best_epoch;
    mo.extras["best_val_nll"] = res.best_val_nll;
    mo.extras["initial_val_nll"] = res.initial_val_nll;
    mo.extras["diverged"] = res.diverged;
    mo.extras["param_count"] = model->param_count();
  } else {
    const ParamStore loaded = load_checkpoint(cfg.checkpoint);
    restore_into(model->params(), loaded);
    model->after_update();
    mo.extras["checkpoint"] = cfg.checkpoint;
  }

  const int s = eval_samples_for(cfg.method, cfg);
  const CalibrationReport id =
      eval_split(*model, bundle.test, s, RandomStream::derive(seed, "run/eval-id"));
  const CalibrationReport ood =
      eval_split(*model, bundle.ood, s, RandomStream::derive(seed, "run/eval-ood"));

  std::string metrics = "split,acc,ece,nll,brier,n\n";
  metrics += "id," + num(id.acc) + "," + num(id.ece) + "," + num(id.nll) + "," +
             num(id.brier) + "," + std::to_string(id.n_items) + "\n";
  metrics += "ood," + num(ood.acc) + "," + num(ood.ece) + "," + num(ood.nll) + "," +
             num(ood.brier) + "," + std::to_string(ood.n_items) + "\n";
  atomic_write(out / "metrics.csv", metrics);
  atomic_write(out / "bins.csv", bins_csv(id));
  mo.artifacts.push_back("metrics.csv");
  mo.artifacts.push_back("bins.csv");
  return mo;
}

ModeOutput mode_sweep(const RunConfig& cfg, const fs::path& out) {
  ModeOutput mo;
  const TaskBundle bundle = make_task(cfg.task);
  const MlpBase base = pretrain_base(bundle, cfg.task.input_dim, cfg.hidden,
                                     cfg.task.n_classes, cfg.task.seed);
  struct Cell {
    std::vector<SweepRow> id, ood;
  };
  std::vector<Cell> cells(cfg.seeds.size());
  parallel_for(static_cast<int>(cfg.seeds.size()), [&](int i) {
    const std::uint64_t seed = cfg.seeds[i];
    std::unique_ptr<Model> model = make_method_model(cfg.method, base, cfg, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    train(*model, bundle.train, bundle.val, tc);
    RandomStream id_rng = RandomStream::derive(seed, "sweep/eval-id");
    RandomStream ood_rng = RandomStream::derive(seed, "sweep/eval-ood");
    cells[i].id = mc_sweep(*model, bundle.test, cfg.sweep_samples, id_rng);
    cells[i].ood = mc_sweep(*model, bundle.ood, cfg.sweep_samples, ood_rng);
  });

  std::string metrics = "seed,split,samples,acc,ece,nll\n";
  std::string timing = "seed,split,samples,wall_seconds\n";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const std::string s = std::to_string(cfg.seeds[i]);
    for (const char* split : {"id", "ood"}) {
      const std::vector<SweepRow>& rows =
          std::string(split) == "id" ? cells[i].id : cells[i].ood;
      for (const SweepRow& r : rows) {
        metrics += s + "," + split + "," + std::to_string(r.s) + "," + num(r.acc) + "," +
                   num(r.ece) + "," + num(r.nll) + "\n";
        timing += s + "," + split + "," + std::to_string(r.s) + "," +
                  num(r.wall_seconds) + "\n";
      }
    }
  }
  atomic_write(out / "metrics.csv", metrics);
  atomic_write(out / "timing.csv", timing);
  mo.artifacts.push_back("metrics.csv");
  mo.artifacts.push_back("timing.csv");
  return mo;
}

ModeOutput mode_map_recovery(const RunConfig& cfg, const fs::path& out) {
  ModeOutput mo;
  const TaskBundle bundle = make_task(cfg.task);
  const MlpBase base = pretrain_base(bundle, cfg.task.input_dim, cfg.hidden,
                                     cfg.task.n_classes, cfg.task.seed);
  const std::uint64_t seed = cfg.seeds[0];
  const std::vector<std::string> methods = {"map_lora", "degenerate", "bayes_lora"};
  const std::vector<std::string> labels = {"map", "degenerate", "full"};
  std::vector<CalibrationReport> reps(methods.size());
  parallel_for(static_cast<int>(methods.size()), [&](int i) {
    std::unique_ptr<Model> model = make_method_model(methods[i], base, cfg, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    train(*model, bundle.train, bundle.val, tc);
    reps[i] = eval_split(*model, bundle.test, eval_samples_for(methods[i], cfg),
                         RandomStream::derive(seed, "recovery/eval"));
  });
  std::string metrics = "method,acc,ece,nll\n";
  for (std::size_t i = 0; i < methods.size(); ++i)
    metrics += labels[i] + "," + num(reps[i].acc) + "," + num(reps[i].ece) + "," +
               num(reps[i].nll) + "\n";
  atomic_write(out / "metrics.csv", metrics);
  mo.artifacts.push_back("metrics.csv");
  return mo;
}

ModeOutput mode_ablate(const RunConfig& cfg, const fs::path& out, bool over_flow) {
  ModeOutput mo;
  const TaskBundle bundle = make_task(cfg.task);
  const MlpBase base = pretrain_base(bundle, cfg.task.input_dim, cfg.hidden,
                                     cfg.task.n_classes, cfg.task.seed);
  const std::vector<int>& axis = over_flow ? cfg.ablate_depths : cfg.ablate_inducing_sides;
  const int n_cells = static_cast<int>(axis.size() * cfg.seeds.size());
  struct Cell {
    CalibrationReport id, ood;
  };
  std::vector<Cell> cells(n_cells);
  parallel_for(n_cells, [&](int c) {
    const int a = c / static_cast<int>(cfg.seeds.size());
    const std::uint64_t seed = cfg.seeds[c % cfg.seeds.size()];
    RunConfig local = cfg;
    if (over_flow) {
      local.layer.flow_depth = axis[a];
    } else {
      local.layer.inducing_rows = axis[a];
      local.layer.inducing_cols = axis[a];
    }
    std::unique_ptr<Model> model = make_method_model("bayes_lora", base, local, seed);
    TrainConfig tc = local.train;
    tc.seed = seed;
    train(*model, bundle.train, bundle.val, tc);
    const int s = local.eval_samples;
    cells[c].id = eval_split(*model, bundle.test, s,
                             RandomStream::derive(seed, "ablate/eval-id"));
    cells[c].ood = eval_split(*model, bundle.ood, s,
                              RandomStream::derive(seed, "ablate/eval-ood"));
  });

  std::string metrics = std::string(over_flow ? "flow_depth" : "inducing_dim") +
                        ",seed,split,acc,ece,nll,brier\n";
  for (int c = 0; c < n_cells; ++c) {
    const int a = c / static_cast<int>(cfg.seeds.size());
    const int level = over_flow ? axis[a] : axis[a] * axis[a];
    const std::string head =
        std::to_string(level) + "," + std::to_string(cfg.seeds[c % cfg.seeds.size()]);
    metrics += head + ",id," + num(cells[c].id.acc) + "," + num(cells[c].id.ece) + "," +
               num(cells[c].id.nll) + "," + num(cells[c].id.brier) + "\n";
    metrics += head + ",ood," + num(cells[c].ood.acc) + "," + num(cells[c].ood.ece) +
               "," + num(cells[c].ood.nll) + "," + num(cells[c].ood.brier) + "\n";
  }
  atomic_write(out / "metrics.csv", metrics);
  mo.artifacts.push_back("metrics.csv");
  return mo;
}

ModeOutput mode_hpo(const RunConfig& cfg, const fs::path& out) {
  ModeOutput mo;
  const TaskBundle bundle = make_task(cfg.task);
  const MlpBase base = pretrain_base(bundle, cfg.task.input_dim, cfg.hidden,
                                     cfg.task.n_classes, cfg.task.seed);
  const std::uint64_t seed = cfg.seeds[0];
  const BoBounds bounds;

  // One configuration evaluation: train at (lr, wd) and score the
  // validation split. A failed cell becomes an infeasible archive entry.
  auto score = [&](double log_lr, double log_wd) {
    struct Scored {
      std::vector<double> f, c;
    } result;
    try {
      RunConfig local = cfg;
      local.train.learning_rate = std::pow(10.0, log_lr);
      local.train.weight_decay = std::pow(10.0, log_wd);
      std::unique_ptr<Model> model = make_method_model(cfg.method, base, local, seed);
      TrainConfig tc = local.train;
      tc.seed = seed;
      train(*model, bundle.train, bundle.val, tc);
      const CalibrationReport rep =
          eval_split(*model, bundle.val, eval_samples_for(cfg.method, local),
                     RandomStream::derive(seed, "hpo/eval"));
      result.f = {rep.ece, rep.nll, -rep.acc};
      result.c = {cfg.hpo_acc_floor - rep.acc};
    } catch (const std::exception&) {
      result.f = {1.0, 50.0, 0.0};
      result.c = {1.0};
    }
    return result;
  };

  ParetoArchive archive(2, 3, 1);
  RandomStream rng = RandomStream::derive(seed, "hpo/loop");

  Matrix u = sobol_grid(cfg.hpo_init_rounds, rng);
  std::vector<std::vector<double>> init_f(cfg.hpo_init_rounds);
  std::vector<std::vector<double>> init_c(cfg.hpo_init_rounds);
  std::vector<std::vector<double>> init_x(cfg.hpo_init_rounds);
  for (int j = 0; j < cfg.hpo_init_rounds; ++j)
    init_x[j] = {bounds.lo_log_lr + u(0, j) * (bounds.hi_log_lr - bounds.lo_log_lr),
                 bounds.lo_log_wd + u(1, j) * (bounds.hi_log_wd - bounds.lo_log_wd)};
  parallel_for(cfg.hpo_init_rounds, [&](int j) {
    auto s = score(init_x[j][0], init_x[j][1]);
    init_f[j] = s.f;
    init_c[j] = s.c;
  });
  for (int j = 0; j < cfg.hpo_init_rounds; ++j)
    archive.add(init_x[j], init_f[j], init_c[j], 0);

  for (int round = 1; round <= cfg.hpo_rounds; ++round) {
    std::vector<int> all(archive.size());
    for (int i = 0; i < archive.size(); ++i) all[i] = i;
    const Matrix xs = archive.x_of(all);
    std::vector<std::unique_ptr<GpSurrogate>> objs;
    for (int m = 0; m < 3; ++m) {
      Matrix y = archive.column_of(all, m);
      double mean = 0.0;
      for (int i = 0; i < y.rows(); ++i) mean += y(i, 0);
      GpConfig gc;
      gc.noise_sd = 1e-3;
      gc.prior_mean = mean / y.rows();
      gc.fit_restarts = 3;
      gc.fit_iters = 60;
      gc.seed = seed * 1000 + static_cast<std::uint64_t>(round) * 10 + m;
      objs.push_back(std::make_unique<GpSurrogate>(xs, y, gc));
      objs.back()->fit();
    }
    Matrix cy(archive.size(), 1);
    double cmean = 0.0;
    for (int i = 0; i < archive.size(); ++i) {
      cy(i, 0) = archive.entries()[i].c[0];
      cmean += cy(i, 0);
    }
    GpConfig cc;
    cc.noise_sd = 1e-3;
    cc.prior_mean = cmean / archive.size();
    cc.fit_restarts = 3;
    cc.fit_iters = 60;
    cc.seed = seed * 1000 + static_cast<std::uint64_t>(round) * 10 + 7;
    GpSurrogate constraint(xs, cy, cc);
    constraint.fit();

    const std::vector<double> next =
        propose(archive, {objs[0].get(), objs[1].get(), objs[2].get()}, {&constraint},
                bounds, cfg.hpo_candidate_budget, cfg.hpo_draws, cfg.hpo_ref_margin, rng);
    auto s = score(next[0], next[1]);
    archive.add(next, s.f, s.c, round);
  }

  atomic_write(out / "metrics.csv", archive.csv());
  atomic_write(out / "pareto.csv", archive.pareto_csv());
  mo.artifacts.push_back("metrics.csv");
  mo.artifacts.push_back("pareto.csv");

  if (!archive.feasible_indices().empty()) {
    const int pick = select_operating_point(archive);
    const ArchiveEntry& e = archive.entries()[pick];
    mo.extras["operating_point"] = {{"index", pick},
                                    {"log10_lr", e.x[0]},
                                    {"log10_wd", e.x[1]},
                                    {"lr", std::pow(10.0, e.x[0])},
                                    {"wd", std::pow(10.0, e.x[1])},
                                    {"ece", e.f[0]},
                                    {"nll", e.f[1]},
                                    {"acc", -e.f[2]},
                                    {"round", e.round}};
  } else {
    mo.extras["operating_point"] = nullptr;
  }
  mo.extras["evaluations"] = archive.size();
  return mo;
}

}  // namespace

void run_experiment(const RunConfig& cfg) {
  const fs::path out(cfg.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " +
                        ec.message());

  ModeOutput mo;
  if (cfg.mode == "train" || cfg.mode == "eval")
    mo = mode_train_or_eval(cfg, out);
  else if (cfg.mode == "sweep-samples")
    mo = mode_sweep(cfg, out);
  else if (cfg.mode == "map-recovery")
    mo = mode_map_recovery(cfg, out);
  else if (cfg.mode == "ablate-flow")
    mo = mode_ablate(cfg, out, true);
  else if (cfg.mode == "ablate-rank")
    mo = mode_ablate(cfg, out, false);
  else if (cfg.mode == "hpo")
    mo = mode_hpo(cfg, out);
  else
    throw UsageError("unknown mode: " + cfg.mode);

  json manifest;
  manifest["mode"] = cfg.mode;
  manifest["config"] = json::parse(resolved_config_json(cfg));
  manifest["seeds"] = cfg.seeds;
  manifest["versions"] = {{"library", "0.1.0"},
                          {"checkpoint_format", kCheckpointVersion},
                          {"checkpoint_schema", kCheckpointSchema}};
  manifest["artifacts"] = mo.artifacts;
  if (!mo.extras.is_null()) manifest["result"] = mo.extras;
  atomic_write(out / "manifest.json", manifest.dump(2) + "\n");
}

RunReport run_from_file(const std::string& config_path, const ConfigOverrides& overrides) {
  RunReport rep;
  std::string text;
  {
    std::ifstream in(config_path);
    if (!in) {
      json err;
      err["error"] = {{"stage", "config"},
                      {"message", "cannot open config: " + config_path}};
      rep.exit_code = 2;
      rep.error_json = err.dump(2);
      return rep;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }

  RunConfig cfg;
  try {
    cfg = load_run_config(text, overrides);
  } catch (const UsageError& e) {
    std::istringstream lines(e.what());
    std::string line;
    std::getline(lines, line);
    json err;
    err["error"] = {{"stage", "config"}, {"message", line}};
    json violations = json::array();
    while (std::getline(lines, line)) violations.push_back(line);
    err["error"]["violations"] = violations;
    rep.exit_code = 2;
    rep.error_json = err.dump(2);
    return rep;
  }

  try {
    run_experiment(cfg);
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"stage", "run"}, {"message", e.what()}};
    rep.exit_code = 1;
    rep.error_json = err.dump(2);
    std::error_code ec;
    if (fs::exists(cfg.out, ec))
      try {
        atomic_write(fs::path(cfg.out) / "error.json", rep.error_json + "\n");
      } catch (const std::exception&) {
        // the record still reaches the caller
      }
  }
  return rep;
}

}  // namespace blora
