// SPDX-License-Identifier: Apache-2.0
#include "blora/toybench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <utility>

#include "blora/error.hpp"
#include "blora/rng.hpp"

namespace blora {

namespace {

constexpr double kPi = 3.14159265358979323846;

Matrix softmax_columns(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (int j = 0; j < logits.cols(); ++j) {
    double mx = logits(0, j);
    for (int i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
      p(i, j) = std::exp(logits(i, j) - mx);
      z += p(i, j);
    }
    for (int i = 0; i < logits.rows(); ++i) p(i, j) /= z;
  }
  return p;
}

Matrix add_col(Matrix m, const Matrix& b) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) += b(i, 0);
  return m;
}

ad::Var add_col_on_tape(ad::Tape& t, ad::Var m, ad::Var b, int n_cols) {
  return t.add(m, t.matmul(b, t.input(Matrix::constant(1, n_cols, 1.0))));
}

Matrix unit_vector(int d, RandomStream& rng) {
  Matrix v = Matrix::randn(d, 1, rng);
  double n = std::sqrt(dot(v, v));
  return (1.0 / n) * v;
}

Batch draw_split(int n, const std::vector<Matrix>& means, double sd, int d,
                 RandomStream& rng) {
  Batch b;
  b.x = Matrix(d, n);
  b.labels.resize(n);
  const int k = static_cast<int>(means.size());
  for (int j = 0; j < n; ++j) {
    const int label = static_cast<int>(rng.uniform_int(k));
    b.labels[j] = label;
    for (int r = 0; r < d; ++r) b.x(r, j) = means[label](r, 0) + sd * rng.normal();
  }
  return b;
}

void check_task(const SyntheticTask& spec) {
  if (spec.n_classes < 2) throw ParameterError("task needs at least two classes");
  if (spec.input_dim < 2) throw ParameterError("shift plane needs input_dim >= 2");
  if (spec.n_pretrain < 1 || spec.n_train < 1 || spec.n_val < 1 || spec.n_test < 1)
    throw ParameterError("split sizes must be at least 1");
  if (!(spec.noise_sd > 0.0)) throw ParameterError("noise_sd must be positive");
}

}  // namespace

Matrix ShiftTransform::apply(const Matrix& x) const {
  Matrix y = matmul(rot, x);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) += offset(i, 0);
  return y;
}

ShiftTransform make_shift(const SyntheticTask& spec) {
  check_task(spec);
  RandomStream rng = RandomStream::derive(spec.seed, "task/shift");
  const int d = spec.input_dim;
  Matrix e1 = unit_vector(d, rng);
  Matrix e2 = Matrix::randn(d, 1, rng);
  e2 = e2 - dot(e1, e2) * e1;
  e2 = (1.0 / std::sqrt(dot(e2, e2))) * e2;
  Matrix v = unit_vector(d, rng);

  const double theta = spec.shift_angle_deg * kPi / 180.0;
  const double c = std::cos(theta) - 1.0;
  const double s = std::sin(theta);
  Matrix rot = Matrix::identity(d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      rot(i, j) += c * (e1(i, 0) * e1(j, 0) + e2(i, 0) * e2(j, 0)) +
                   s * (e2(i, 0) * e1(j, 0) - e1(i, 0) * e2(j, 0));
  ShiftTransform out;
  out.rot = rot;
  out.offset = spec.shift_mean * v;
  return out;
}

TaskBundle make_task(const SyntheticTask& spec) {
  check_task(spec);
  RandomStream mean_rng = RandomStream::derive(spec.seed, "task/means");
  std::vector<Matrix> means;
  for (int k = 0; k < spec.n_classes; ++k)
    means.push_back(spec.mean_scale * Matrix::randn(spec.input_dim, 1, mean_rng));

  TaskBundle bundle;
  auto split = [&](const char* name, int n) {
    RandomStream rng = RandomStream::derive(spec.seed, std::string("task/split/") + name);
    return draw_split(n, means, spec.noise_sd, spec.input_dim, rng);
  };
  bundle.pretrain = split("pretrain", spec.n_pretrain);
  bundle.train = split("train", spec.n_train);
  bundle.val = split("val", spec.n_val);
  bundle.test = split("test", spec.n_test);
  bundle.ood = split("ood", spec.n_test);
  const ShiftTransform shift = make_shift(spec);
  bundle.ood.x = shift.apply(bundle.ood.x);
  return bundle;
}

PlainMlpModel::PlainMlpModel(int input_dim, int hidden, int k, std::uint64_t seed) : k_(k) {
  if (input_dim < 1 || hidden < 1 || k < 2) throw ParameterError("bad perceptron shape");
  RandomStream rng = RandomStream::derive(seed, "pretrain/init");
  store_.add("w1", (1.0 / std::sqrt(static_cast<double>(input_dim))) *
                       Matrix::randn(hidden, input_dim, rng));
  store_.add("b1", Matrix::zeros(hidden, 1));
  store_.add("w2",
             (1.0 / std::sqrt(static_cast<double>(hidden))) * Matrix::randn(k, hidden, rng));
  store_.add("b2", Matrix::zeros(k, 1));
}

Matrix PlainMlpModel::predict_probs(const Matrix& x, int, RandomStream&) const {
  Matrix h = tanh_elem(add_col(matmul(store_.at("w1"), x), store_.at("b1")));
  return softmax_columns(add_col(matmul(store_.at("w2"), h), store_.at("b2")));
}

std::pair<ad::Var, ElboBreakdown> PlainMlpModel::loss_on_tape(ad::Tape& t, const Batch& batch,
                                                              int, double kl_scale, bool,
                                                              double label_smoothing,
                                                              RandomStream&) {
  for (const auto& name : store_.names()) t.param(name, store_.at(name));
  ad::Var x = t.input(batch.x);
  ad::Var h = t.tanh(
      add_col_on_tape(t, t.matmul(t.param_var("w1"), x), t.param_var("b1"), batch.n()));
  ad::Var logits =
      add_col_on_tape(t, t.matmul(t.param_var("w2"), h), t.param_var("b2"), batch.n());
  Matrix targets = smoothed_target_matrix(batch.labels, k_, label_smoothing);
  ad::Var xent = t.softmax_xent_total(logits, targets);
  ElboBreakdown bd;
  bd.data_term = -t.value(xent)(0, 0);
  bd.elbo = bd.data_term;
  bd.kl_scale = kl_scale;
  bd.n_mc = 1;
  return {t.scale(xent, 1.0 / batch.n()), bd};
}

MlpBase PlainMlpModel::base() const {
  return {store_.at("w1"), store_.at("b1"), store_.at("w2"), store_.at("b2")};
}

MlpBase pretrain_base(const TaskBundle& data, int input_dim, int hidden, int k,
                      std::uint64_t seed) {
  PlainMlpModel model(input_dim, hidden, k, seed);
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.weight_decay = 1e-4;
  cfg.epochs = 15;
  cfg.batch_size = 32;
  cfg.mc_train = 1;
  cfg.mc_eval = 1;
  cfg.label_smoothing = 0.0;
  cfg.eval_every = 3;
  cfg.milestones = {10};
  cfg.seed = seed;
  TrainResult result = train(model, data.pretrain, data.val, cfg);
  if (result.diverged) throw NumericError("base pretraining diverged");
  return model.base();
}

BayesLoraMlp::BayesLoraMlp(MlpBase base, const BayesLoraConfig& cfg, std::uint64_t seed)
    : base_(std::move(base)),
      cfg_(cfg),
      l1_("fc1.", base_.w1, cfg),
      l2_("fc2.", base_.w2, cfg) {
  store_.add("lambda_raw",
             Matrix::constant(1, 1, lambda_raw_init(cfg.init_lambda, cfg.max_lambda)));
  RandomStream rng = RandomStream::derive(seed, "model/bayes-init");
  l1_.init_params(store_, rng);
  l2_.init_params(store_, rng);
}

Matrix BayesLoraMlp::predict_probs(const Matrix& x, int n_samples, RandomStream& rng) const {
  if (n_samples < 1) throw ParameterError("sample count must be at least 1");
  Matrix acc = Matrix::zeros(base_.w2.rows(), x.cols());
  for (int s = 0; s < n_samples; ++s) {
    AdapterSample s1 = l1_.sample_adapters(store_, 1, rng)[0];
    AdapterSample s2 = l2_.sample_adapters(store_, 1, rng)[0];
    Matrix h = tanh_elem(add_col(l1_.forward(x, {s1})[0], base_.b1));
    Matrix logits = add_col(l2_.forward(h, {s2})[0], base_.b2);
    acc += softmax_columns(logits);
  }
  return (1.0 / static_cast<double>(n_samples)) * acc;
}

std::pair<ad::Var, ElboBreakdown> BayesLoraMlp::loss_on_tape(ad::Tape& t, const Batch& batch,
                                                             int n_samples, double kl_scale,
                                                             bool scale_kl_w,
                                                             double label_smoothing,
                                                             RandomStream& rng) {
  for (const auto& name : store_.names()) t.param(name, store_.at(name));
  ad::Var x = t.input(batch.x);
  ad::Var b1 = t.input(base_.b1);
  ad::Var b2 = t.input(base_.b2);
  auto logits_for = [&](ad::Tape& tape, const std::vector<BayesLoraLayer::TapeSample>& s,
                        int) {
    ad::Var h = tape.tanh(
        add_col_on_tape(tape, l1_.forward_on_tape(tape, s[0], x), b1, batch.n()));
    return add_col_on_tape(tape, l2_.forward_on_tape(tape, s[1], h), b2, batch.n());
  };
  ElboParts parts = compose_elbo(t, {&l1_, &l2_}, logits_for, batch, n_samples, kl_scale,
                                 scale_kl_w, label_smoothing, "lambda_raw", cfg_.max_lambda,
                                 rng);
  return {parts.loss, parts.breakdown};
}

void BayesLoraMlp::after_update() {
  l1_.invalidate_cache();
  l2_.invalidate_cache();
}

MlpBase BayesLoraMlp::merged() const {
  return {l1_.merge_deterministic(store_), base_.b1, l2_.merge_deterministic(store_),
          base_.b2};
}

MapLoraMlp::MapLoraMlp(MlpBase base, int rank, double alpha, std::uint64_t seed)
    : base_(std::move(base)), rank_(rank), alpha_(alpha) {
  if (rank < 1) throw ParameterError("rank must be at least 1");
  if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
  const int d_in = base_.w1.cols();
  const int hidden = base_.w1.rows();
  const int k = base_.w2.rows();
  RandomStream rng = RandomStream::derive(seed, "model/map-init");
  store_.add("fc1.a",
             (1.0 / std::sqrt(static_cast<double>(d_in))) * Matrix::randn(rank, d_in, rng));
  store_.add("fc1.b", Matrix::zeros(hidden, rank));
  store_.add("fc2.a",
             (1.0 / std::sqrt(static_cast<double>(hidden))) * Matrix::randn(rank, hidden, rng));
  store_.add("fc2.b", Matrix::zeros(k, rank));
}

Matrix MapLoraMlp::predict_probs(const Matrix& x, int, RandomStream&) const {
  const double ar = alpha_ / rank_;
  Matrix y1 = matmul(base_.w1, x) +
              ar * matmul(store_.at("fc1.b"), matmul(store_.at("fc1.a"), x));
  Matrix h = tanh_elem(add_col(y1, base_.b1));
  Matrix y2 = matmul(base_.w2, h) +
              ar * matmul(store_.at("fc2.b"), matmul(store_.at("fc2.a"), h));
  return softmax_columns(add_col(y2, base_.b2));
}

std::pair<ad::Var, ElboBreakdown> MapLoraMlp::loss_on_tape(ad::Tape& t, const Batch& batch,
                                                           int, double kl_scale, bool,
                                                           double label_smoothing,
                                                           RandomStream&) {
  for (const auto& name : store_.names()) t.param(name, store_.at(name));
  const double ar = alpha_ / rank_;
  ad::Var x = t.input(batch.x);
  ad::Var y1 = t.add(t.matmul(t.input(base_.w1), x),
                     t.scale(t.matmul(t.param_var("fc1.b"),
                                      t.matmul(t.param_var("fc1.a"), x)),
                             ar));
  ad::Var h = t.tanh(add_col_on_tape(t, y1, t.input(base_.b1), batch.n()));
  ad::Var y2 = t.add(t.matmul(t.input(base_.w2), h),
                     t.scale(t.matmul(t.param_var("fc2.b"),
                                      t.matmul(t.param_var("fc2.a"), h)),
                             ar));
  ad::Var logits = add_col_on_tape(t, y2, t.input(base_.b2), batch.n());
  Matrix targets = smoothed_target_matrix(batch.labels, base_.w2.rows(), label_smoothing);
  ad::Var xent = t.softmax_xent_total(logits, targets);
  ElboBreakdown bd;
  bd.data_term = -t.value(xent)(0, 0);
  bd.elbo = bd.data_term;
  bd.kl_scale = kl_scale;
  bd.n_mc = 1;
  return {t.scale(xent, 1.0 / batch.n()), bd};
}

BayesLoraConfig degenerate_of(const BayesLoraConfig& cfg) {
  BayesLoraConfig d = cfg;
  d.max_sd_u = 1e-3;
  d.init_lambda = 1e-4;
  d.max_lambda = 1e-4;
  d.flow_depth = 0;
  return d;
}

long analytic_bayes_layer_count(int d_out, int d_in, const BayesLoraConfig& cfg) {
  const long r = cfg.lora_rank;
  const long ri = cfg.inducing_rows;
  const long ci = cfg.inducing_cols;
  const long d = ri * ci;
  long total = ri * r + ri;          // a_row z + d_raw
  total += ci * d_in + ci;           // a_col
  total += ri * d_out + ri;          // b_row
  total += ci * r + ci;              // b_col
  total += 2 * d;                    // m + log_sigma
  total += static_cast<long>(cfg.flow_depth) * (6 * d * d + 4 * d);
  return total;
}

long analytic_map_layer_count(int d_out, int d_in, int rank) {
  return static_cast<long>(rank) * (d_in + d_out);
}

long analytic_model_count(const std::string& method, int input_dim, int hidden, int k,
                          int rank, const BayesLoraConfig& cfg) {
  if (method == "map_lora")
    return analytic_map_layer_count(hidden, input_dim, rank) +
           analytic_map_layer_count(k, hidden, rank);
  BayesLoraConfig used = method == "degenerate" ? degenerate_of(cfg) : cfg;
  return analytic_bayes_layer_count(hidden, input_dim, used) +
         analytic_bayes_layer_count(k, hidden, used) + 1;  // shared scale
}

std::vector<GridRow> run_grid(const GridSpec& spec) {
  for (const auto& m : spec.methods)
    if (m != "map_lora" && m != "bayes_lora" && m != "degenerate")
      throw ParameterError("unknown grid method: " + m);

  TaskBundle bundle = make_task(spec.task);
  MlpBase base = pretrain_base(bundle, spec.task.input_dim, spec.hidden,
                               spec.task.n_classes, spec.task.seed);

  std::vector<GridRow> rows;
  for (const auto& method : spec.methods) {
    for (std::uint64_t seed : spec.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      GridRow id_row, ood_row;
      id_row.method = ood_row.method = method;
      id_row.seed = ood_row.seed = seed;
      id_row.split = "id";
      ood_row.split = "ood";
      try {
        std::unique_ptr<Model> model;
        if (method == "map_lora") {
          model = std::make_unique<MapLoraMlp>(base, spec.bayes_cfg.lora_rank,
                                               spec.bayes_cfg.alpha, seed);
        } else if (method == "bayes_lora") {
          model = std::make_unique<BayesLoraMlp>(base, spec.bayes_cfg, seed);
        } else {
          model = std::make_unique<BayesLoraMlp>(base, degenerate_of(spec.bayes_cfg), seed);
        }
        TrainConfig tc = spec.train_cfg;
        tc.seed = seed;
        train(*model, bundle.train, bundle.val, tc);
        const int eval_s = method == "map_lora" ? 1 : spec.eval_samples;
        RandomStream id_rng = RandomStream::derive(seed, "grid/eval-id");
        CalibrationReport id_rep =
            evaluate(predictions_of(*model, bundle.test, eval_s, id_rng));
        RandomStream ood_rng = RandomStream::derive(seed, "grid/eval-ood");
        CalibrationReport ood_rep =
            evaluate(predictions_of(*model, bundle.ood, eval_s, ood_rng));
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        id_row.acc = id_rep.acc;
        id_row.ece = id_rep.ece;
        id_row.nll = id_rep.nll;
        id_row.brier = id_rep.brier;
        ood_row.acc = ood_rep.acc;
        ood_row.ece = ood_rep.ece;
        ood_row.nll = ood_rep.nll;
        ood_row.brier = ood_rep.brier;
        id_row.param_count = ood_row.param_count = model->param_count();
        id_row.wall_seconds = ood_row.wall_seconds = wall;
      } catch (const std::exception& e) {
        id_row.failed = ood_row.failed = true;
        id_row.error = ood_row.error = e.what();
      }
      rows.push_back(id_row);
      rows.push_back(ood_row);
    }
  }
  return rows;
}

std::string grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream out;
  out << "method,seed,split,acc,ece,nll,brier,param_count,wall_seconds,failed,error\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    std::string err = r.error;
    for (auto& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    out << r.method << ',' << r.seed << ',' << r.split << ',' << r.acc << ',' << r.ece << ','
        << r.nll << ',' << r.brier << ',' << r.param_count << ',' << r.wall_seconds << ','
        << (r.failed ? 1 : 0) << ',' << err << '\n';
  }
  return out.str();
}

SeqBundle make_seq_task(const SeqTask& spec) {
  if (spec.vocab < 2 || spec.seq_len < 2 || spec.n_classes < 2 || spec.embed_dim < 1)
    throw ParameterError("bad sequence task spec");
  RandomStream table_rng = RandomStream::derive(spec.seed, "seq/table");
  std::vector<std::vector<int>> table(spec.vocab, std::vector<int>(spec.vocab));
  for (auto& row : table)
    for (auto& v : row) v = static_cast<int>(table_rng.uniform_int(spec.n_classes));
  RandomStream embed_rng = RandomStream::derive(spec.seed, "seq/embed");
  SeqBundle bundle;
  bundle.embed = Matrix::randn(spec.embed_dim, spec.vocab, embed_rng);

  auto draw = [&](const char* name, int n) {
    RandomStream rng = RandomStream::derive(spec.seed, std::string("seq/split/") + name);
    std::vector<Batch> out;
    for (int i = 0; i < n; ++i) {
      std::vector<int> ids(spec.seq_len);
      for (auto& id : ids) id = static_cast<int>(rng.uniform_int(spec.vocab));
      Batch b;
      b.x = Matrix(spec.embed_dim, spec.seq_len);
      b.labels.resize(spec.seq_len);
      for (int tpos = 0; tpos < spec.seq_len; ++tpos) {
        const int prev = tpos == 0 ? ids[0] : ids[tpos - 1];
        b.labels[tpos] = table[prev][ids[tpos]];
        for (int r = 0; r < spec.embed_dim; ++r) b.x(r, tpos) = bundle.embed(r, ids[tpos]);
      }
      out.push_back(std::move(b));
    }
    return out;
  };
  bundle.train = draw("train", spec.n_train);
  bundle.val = draw("val", spec.n_val);
  return bundle;
}

AttnBase pretrain_attention_base(const SeqBundle& data, const SeqTask& spec, int epochs,
                                 std::uint64_t seed) {
  const int d = spec.embed_dim;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  RandomStream init = RandomStream::derive(seed, "seq/pretrain-init");
  ParamStore store;
  store.add("w_q", inv * Matrix::randn(d, d, init));
  store.add("w_k", inv * Matrix::randn(d, d, init));
  store.add("w_v", inv * Matrix::randn(d, d, init));
  store.add("w_o", inv * Matrix::randn(spec.n_classes, d, init));

  AdamW opt(5e-3, 0.9, 0.999, 1e-5, 1e-4);
  RandomStream order_rng = RandomStream::derive(seed, "seq/pretrain-order");
  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    order_rng.shuffle(order);
    for (int idx : order) {
      const Batch& b = data.train[idx];
      ad::Tape t;
      for (const auto& name : store.names()) t.param(name, store.at(name));
      ad::Var x = t.input(b.x);
      ad::Var q = t.matmul(t.param_var("w_q"), x);
      ad::Var k = t.matmul(t.param_var("w_k"), x);
      ad::Var v = t.matmul(t.param_var("w_v"), x);
      ad::Var attn = t.softmax_cols(t.scale(t.matmul(t.transpose(k), q), inv));
      ad::Var logits = t.matmul(t.param_var("w_o"), t.add(x, t.matmul(v, attn)));
      Matrix targets = smoothed_target_matrix(b.labels, spec.n_classes, 0.0);
      ad::Var loss = t.scale(t.softmax_xent_total(logits, targets), 1.0 / b.n());
      auto grads = t.gradients(loss);
      clip_global_norm(grads, 1.0);
      opt.step(store, grads, 1.0);
    }
  }
  return {store.at("w_q"), store.at("w_k"), store.at("w_v"), store.at("w_o")};
}

BayesAttentionToy::BayesAttentionToy(AttnBase base, const SeqTask& spec,
                                     const BayesLoraConfig& cfg, std::uint64_t seed)
    : base_(std::move(base)),
      cfg_(cfg),
      lq_("att_q.", base_.w_q, cfg),
      lk_("att_k.", base_.w_k, cfg),
      lo_("head.", base_.w_o, cfg) {
  (void)spec;
  store_.add("lambda_raw",
             Matrix::constant(1, 1, lambda_raw_init(cfg.init_lambda, cfg.max_lambda)));
  RandomStream rng = RandomStream::derive(seed, "model/attn-init");
  lq_.init_params(store_, rng);
  lk_.init_params(store_, rng);
  lo_.init_params(store_, rng);
}

Matrix BayesAttentionToy::predict_probs(const Matrix& x, int n_samples,
                                        RandomStream& rng) const {
  if (n_samples < 1) throw ParameterError("sample count must be at least 1");
  const double inv = 1.0 / std::sqrt(static_cast<double>(base_.w_q.rows()));
  Matrix acc = Matrix::zeros(base_.w_o.rows(), x.cols());
  for (int s = 0; s < n_samples; ++s) {
    AdapterSample sq = lq_.sample_adapters(store_, 1, rng)[0];
    AdapterSample sk = lk_.sample_adapters(store_, 1, rng)[0];
    AdapterSample so = lo_.sample_adapters(store_, 1, rng)[0];
    Matrix q = lq_.forward(x, {sq})[0];
    Matrix k = lk_.forward(x, {sk})[0];
    Matrix v = matmul(base_.w_v, x);
    Matrix attn = softmax_columns(inv * matmul(transpose(k), q));
    Matrix logits = lo_.forward(x + matmul(v, attn), {so})[0];
    acc += softmax_columns(logits);
  }
  return (1.0 / static_cast<double>(n_samples)) * acc;
}

std::pair<ad::Var, ElboBreakdown> BayesAttentionToy::loss_on_tape(
    ad::Tape& t, const Batch& batch, int n_samples, double kl_scale, bool scale_kl_w,
    double label_smoothing, RandomStream& rng) {
  for (const auto& name : store_.names()) t.param(name, store_.at(name));
  const double inv = 1.0 / std::sqrt(static_cast<double>(base_.w_q.rows()));
  ad::Var x = t.input(batch.x);
  ad::Var v = t.matmul(t.input(base_.w_v), x);
  auto logits_for = [&](ad::Tape& tape, const std::vector<BayesLoraLayer::TapeSample>& s,
                        int) {
    ad::Var q = lq_.forward_on_tape(tape, s[0], x);
    ad::Var k = lk_.forward_on_tape(tape, s[1], x);
    ad::Var attn = tape.softmax_cols(tape.scale(tape.matmul(tape.transpose(k), q), inv));
    return lo_.forward_on_tape(tape, s[2], tape.add(x, tape.matmul(v, attn)));
  };
  ElboParts parts = compose_elbo(t, {&lq_, &lk_, &lo_}, logits_for, batch, n_samples,
                                 kl_scale, scale_kl_w, label_smoothing, "lambda_raw",
                                 cfg_.max_lambda, rng);
  return {parts.loss, parts.breakdown};
}

void BayesAttentionToy::after_update() {
  lq_.invalidate_cache();
  lk_.invalidate_cache();
  lo_.invalidate_cache();
}

PredictionBatch eval_sequences(const Model& model, const std::vector<Batch>& sequences,
                               int n_samples, RandomStream& rng) {
  PredictionBatch merged;
  for (const auto& seq : sequences) {
    PredictionBatch p = predictions_of(model, seq, n_samples, rng);
    merged.probs.insert(merged.probs.end(), p.probs.begin(), p.probs.end());
    merged.labels.insert(merged.labels.end(), p.labels.begin(), p.labels.end());
  }
  return merged;
}

}  // namespace blora
