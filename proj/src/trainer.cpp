// SPDX-License-Identifier: Apache-2.0
#include "blora/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "blora/error.hpp"
#include "blora/metrics.hpp"
#include "blora/rng.hpp"

namespace blora {

void validate(const TrainConfig& cfg) {
  if (cfg.mc_train < 1 || cfg.mc_eval < 1)
    throw ParameterError("MC sample counts must be at least 1");
  if (!(cfg.label_smoothing >= 0.0 && cfg.label_smoothing < 1.0))
    throw ParameterError("label smoothing must be in [0, 1)");
  if (cfg.epochs < 0) throw ParameterError("epochs must be nonnegative");
  if (cfg.batch_size < 1) throw ParameterError("batch_size must be at least 1");
  if (cfg.eval_every < 1) throw ParameterError("eval_every must be at least 1");
  if (cfg.steps_per_epoch < 1) throw ParameterError("steps_per_epoch must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
}

Matrix smoothed_targets(int label, int k, double eps) {
  if (label < 0 || label >= k) throw ParameterError("label out of range");
  if (!(eps >= 0.0 && eps < 1.0)) throw ParameterError("smoothing must be in [0, 1)");
  Matrix t = Matrix::constant(k, 1, eps / static_cast<double>(k));
  t(label, 0) += 1.0 - eps;
  return t;
}

Matrix smoothed_target_matrix(const std::vector<int>& labels, int k, double eps) {
  Matrix t(k, static_cast<int>(labels.size()));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    Matrix col = smoothed_targets(labels[j], k, eps);
    for (int i = 0; i < k; ++i) t(i, static_cast<int>(j)) = col(i, 0);
  }
  return t;
}

double kl_scale_value(double base, int steps_per_epoch) {
  if (steps_per_epoch < 1) throw ParameterError("steps_per_epoch must be at least 1");
  return base / static_cast<double>(steps_per_epoch);
}

double lr_multiplier(const std::vector<int>& milestones, double decay, int epoch) {
  double mult = 1.0;
  for (int m : milestones)
    if (m <= epoch) mult *= decay;
  return mult;
}

namespace {

// Closed-form whitened KL on the tape: (1/2)(sum s^2 + ||m||^2 - d - sum log s^2).
ad::Var whitened_kl_on_tape(ad::Tape& t, const BayesLoraLayer& layer) {
  ad::Var m = t.param_var(layer.prefix() + "m");
  ad::Var sigma =
      t.clamp_max(t.exp(t.param_var(layer.prefix() + "log_sigma")), layer.config().max_sd_u);
  ad::Var s2 = t.mul(sigma, sigma);
  ad::Var acc = t.add(t.sum(s2), ad::dot_all(t, m, m));
  acc = t.sub(acc, t.input(Matrix::constant(1, 1, static_cast<double>(layer.u_dim()))));
  acc = t.sub(acc, t.scale(t.sum(t.log(sigma)), 2.0));
  return t.scale(acc, 0.5);
}

// log q0(u0) as a function of log_sigma with the noise fixed:
// -d/2 log 2pi - (1/2)||eps||^2 - sum log sigma.
ad::Var base_logdensity_on_tape(ad::Tape& t, const BayesLoraLayer& layer,
                                const BayesLoraLayer::TapeSample& s) {
  double c = -0.5 * layer.u_dim() * kLog2Pi - 0.5 * dot(s.eps_u, s.eps_u);
  ad::Var sigma =
      t.clamp_max(t.exp(t.param_var(layer.prefix() + "log_sigma")), layer.config().max_sd_u);
  return t.sub(t.input(Matrix::constant(1, 1, c)), t.sum(t.log(sigma)));
}

// Standard-normal log-density of the pushed sample (whitened prior).
ad::Var whitened_prior_on_tape(ad::Tape& t, const BayesLoraLayer& layer, ad::Var u) {
  double c = -0.5 * layer.u_dim() * kLog2Pi;
  return t.add(t.input(Matrix::constant(1, 1, c)), t.scale(ad::dot_all(t, u, u), -0.5));
}

// Kronecker-prior log-density of the pushed sample (non-whitened path),
// built from the A-branch covariance factors.
ad::Var kron_prior_on_tape(ad::Tape& t, const BayesLoraLayer& layer, ad::Var u) {
  const int r = layer.config().inducing_rows;
  const int c = layer.config().inducing_cols;
  auto k_of = [&](const std::string& side) {
    ad::Var z = t.param_var(layer.prefix() + side + ".z");
    ad::Var d = ad::softplus(t, t.param_var(layer.prefix() + side + ".d_raw"));
    return t.add(t.matmul(z, t.transpose(z)), ad::diag_embed(t, t.mul(d, d)));
  };
  ad::Var k_row = k_of("a_row");
  ad::Var k_col = k_of("a_col");
  ad::Var u_mat = t.reshape(u, r, c);
  ad::Var left = t.solve_psd(k_row, u_mat, /*jitter_retry=*/true);
  ad::Var w = t.transpose(t.solve_psd(k_col, t.transpose(left), /*jitter_retry=*/true));
  ad::Var quad = ad::dot_all(t, u_mat, w);
  ad::Var logdet = t.add(t.scale(t.logdet_psd(k_row, true), static_cast<double>(c)),
                         t.scale(t.logdet_psd(k_col, true), static_cast<double>(r)));
  ad::Var acc = t.add(t.input(Matrix::constant(1, 1, static_cast<double>(r * c) * kLog2Pi)),
                      t.add(logdet, quad));
  return t.scale(acc, -0.5);
}

}  // namespace

ElboParts compose_elbo(ad::Tape& t, const std::vector<const BayesLoraLayer*>& layers,
                       const LogitsBuilder& logits_for_sample, const Batch& batch,
                       int n_samples, double kl_scale, bool scale_kl_w,
                       double label_smoothing, const std::string& lambda_name,
                       double max_lambda, RandomStream& rng) {
  if (batch.n() < 1) throw ParameterError("batch must be nonempty");
  if (n_samples < 1) throw ParameterError("sample count must be at least 1");
  if (layers.empty()) throw ParameterError("no adapter layers");

  ad::Var lam = lambda_on_tape(t, t.param_var(lambda_name), max_lambda);

  std::vector<BayesLoraLayer::TapeProjectors> projectors;
  projectors.reserve(layers.size());
  for (const auto* layer : layers) projectors.push_back(layer->projectors_on_tape(t));

  bool closed_form_kl = true;
  for (const auto* layer : layers)
    if (layer->flow().depth() > 0 || !layer->config().whitened) closed_form_kl = false;

  Matrix targets;
  ad::Var data_acc;
  ad::Var kl_u_acc;
  bool have_kl_acc = false;
  for (int s = 0; s < n_samples; ++s) {
    std::vector<BayesLoraLayer::TapeSample> samples;
    samples.reserve(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
      samples.push_back(layers[l]->sample_on_tape(t, projectors[l], lam, rng));
    ad::Var logits = logits_for_sample(t, samples, s);
    if (s == 0)
      targets = smoothed_target_matrix(batch.labels, t.value(logits).rows(), label_smoothing);
    ad::Var xent = t.softmax_xent_total(logits, targets);
    data_acc = s == 0 ? xent : t.add(data_acc, xent);
    if (!closed_form_kl) {
      // One KL term per layer sharing this sample's draws.
      for (std::size_t l = 0; l < layers.size(); ++l) {
        ad::Var lq = base_logdensity_on_tape(t, *layers[l], samples[l]);
        ad::Var lp = layers[l]->config().whitened
                         ? whitened_prior_on_tape(t, *layers[l], samples[l].u)
                         : kron_prior_on_tape(t, *layers[l], samples[l].u);
        ad::Var term = t.sub(t.sub(lq, samples[l].logdet), lp);
        kl_u_acc = have_kl_acc ? t.add(kl_u_acc, term) : term;
        have_kl_acc = true;
      }
    }
  }
  ad::Var data_term = t.scale(data_acc, -1.0 / static_cast<double>(n_samples));

  ad::Var kl_u;
  if (closed_form_kl) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      ad::Var term = whitened_kl_on_tape(t, *layers[l]);
      kl_u = l == 0 ? term : t.add(kl_u, term);
    }
  } else {
    kl_u = t.scale(kl_u_acc, 1.0 / static_cast<double>(n_samples));
  }

  long d_total = 0;
  for (const auto* layer : layers) d_total += layer->weight_dim();
  ad::Var one = t.input(Matrix::constant(1, 1, 1.0));
  ad::Var kl_w = t.scale(t.sub(t.sub(t.mul(lam, lam), one), t.scale(t.log(lam), 2.0)),
                         0.5 * static_cast<double>(d_total));

  ad::Var penalty = scale_kl_w ? t.scale(t.add(kl_u, kl_w), kl_scale)
                               : t.add(t.scale(kl_u, kl_scale), kl_w);
  ad::Var elbo = t.sub(data_term, penalty);
  ElboParts parts;
  parts.loss = t.scale(elbo, -1.0 / static_cast<double>(batch.n()));

  parts.breakdown.data_term = t.value(data_term)(0, 0);
  parts.breakdown.kl_u = t.value(kl_u)(0, 0);
  parts.breakdown.kl_w = conditional_kl(t.value(lam)(0, 0), d_total);
  parts.breakdown.kl_scale = kl_scale;
  parts.breakdown.n_mc = n_samples;
  parts.breakdown.elbo =
      scale_kl_w
          ? parts.breakdown.data_term -
                kl_scale * (parts.breakdown.kl_u + parts.breakdown.kl_w)
          : parts.breakdown.data_term - kl_scale * parts.breakdown.kl_u - parts.breakdown.kl_w;
  return parts;
}

std::pair<ElboBreakdown, std::map<std::string, Matrix>> elbo_step(Model& model,
                                                                  const Batch& batch,
                                                                  const TrainConfig& cfg,
                                                                  RandomStream& rng) {
  validate(cfg);
  if (batch.n() < 1) throw ParameterError("batch must be nonempty");
  ad::Tape t;
  const double scale = kl_scale_value(cfg.kl_scale_base, cfg.steps_per_epoch);
  auto [loss, breakdown] = model.loss_on_tape(t, batch, cfg.mc_train, scale, cfg.scale_kl_w,
                                              cfg.label_smoothing, rng);
  if (!std::isfinite(breakdown.data_term))
    throw NumericError("non-finite data_term in training objective");
  if (!std::isfinite(breakdown.kl_u)) throw NumericError("non-finite kl_u in training objective");
  if (!std::isfinite(breakdown.kl_w)) throw NumericError("non-finite kl_w in training objective");
  auto grads = t.gradients(loss);
  return {breakdown, std::move(grads)};
}

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double wd)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(wd) {
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ParameterError("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ParameterError("epsilon must be positive");
}

void AdamW::step(ParamStore& params, const std::map<std::string, Matrix>& grads,
                 double lr_scale) {
  ++t_;
  const double lr = lr_ * lr_scale;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Matrix::zeros(g.rows(), g.cols())).first;
      v_.emplace(name, Matrix::zeros(g.rows(), g.cols()));
    }
    Matrix& m = mit->second;
    Matrix& v = v_.at(name);
    // Decoupled weight decay precedes the adaptive step.
    for (std::size_t i = 0; i < p.size(); ++i) {
      p.at(i) *= 1.0 - lr * wd_;
      m.at(i) = beta1_ * m.at(i) + (1.0 - beta1_) * g.at(i);
      v.at(i) = beta2_ * v.at(i) + (1.0 - beta2_) * g.at(i) * g.at(i);
      const double mhat = m.at(i) / bc1;
      const double vhat = v.at(i) / bc2;
      p.at(i) -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double clip_global_norm(std::map<std::string, Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    (void)name;
    for (std::size_t i = 0; i < g.size(); ++i) sq += g.at(i) * g.at(i);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      (void)name;
      for (std::size_t i = 0; i < g.size(); ++i) g.at(i) *= s;
    }
  }
  return norm;
}

namespace {

struct EvalOutcome {
  double nll_value = 0.0;
  double acc_value = 0.0;
};

EvalOutcome evaluate_split(const Model& model, const Batch& val, int s,
                           const RandomStream& eval_base) {
  RandomStream r = eval_base;  // common draws across evaluations
  PredictionBatch preds = predictions_of(model, val, s, r);
  return {nll(preds), accuracy(preds)};
}

}  // namespace

TrainResult train(Model& model, const Batch& train_data, const Batch& val_data,
                  const TrainConfig& cfg) {
  validate(cfg);
  if (train_data.n() < 1 || val_data.n() < 1)
    throw ParameterError("train and validation splits must be nonempty");

  TrainConfig run_cfg = cfg;
  const int n = train_data.n();
  run_cfg.steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult result;
  result.best_params = model.params();
  if (cfg.epochs == 0) {
    result.initial_val_nll = std::numeric_limits<double>::quiet_NaN();
    result.best_val_nll = std::numeric_limits<double>::quiet_NaN();
    return result;
  }

  RandomStream shuffle_rng = RandomStream::derive(cfg.seed, "train/shuffle");
  RandomStream mc_rng = RandomStream::derive(cfg.seed, "train/mc");
  const RandomStream eval_base = RandomStream::derive(cfg.seed, "train/eval");

  EvalOutcome initial = evaluate_split(model, val_data, cfg.mc_eval, eval_base);
  result.initial_val_nll = initial.nll_value;
  result.best_val_nll = initial.nll_value;
  result.best_epoch = -1;

  AdamW opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
  ParamStore last_good = model.params();

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double mult = lr_multiplier(cfg.milestones, cfg.lr_decay, epoch);
    shuffle_rng.shuffle(order);

    ElboBreakdown mean_bd;
    double loss_sum = 0.0;
    int steps = 0;
    bool bad = false;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      std::vector<int> idx(order.begin() + start, order.begin() + stop);
      Batch batch = gather(train_data, idx);
      ElboBreakdown bd;
      std::map<std::string, Matrix> grads;
      try {
        auto res = elbo_step(model, batch, run_cfg, mc_rng);
        bd = res.first;
        grads = std::move(res.second);
      } catch (const NumericError&) {
        bad = true;
        break;
      }
      const double norm = clip_global_norm(grads, cfg.grad_clip);
      if (!std::isfinite(norm)) {
        bad = true;
        break;
      }
      opt.step(model.params(), grads, mult);
      model.after_update();
      mean_bd.data_term += bd.data_term;
      mean_bd.kl_u += bd.kl_u;
      mean_bd.kl_w += bd.kl_w;
      mean_bd.elbo += bd.elbo;
      mean_bd.kl_scale = bd.kl_scale;
      mean_bd.n_mc = bd.n_mc;
      loss_sum += -bd.elbo / batch.n();
      ++steps;
    }
    if (bad) {
      model.params() = last_good;
      model.after_update();
      result.diverged = true;
      break;
    }
    mean_bd.data_term /= steps;
    mean_bd.kl_u /= steps;
    mean_bd.kl_w /= steps;
    mean_bd.elbo /= steps;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_breakdown = mean_bd;
    rec.train_loss = loss_sum / steps;
    rec.lr = cfg.learning_rate * mult;
    if ((epoch + 1) % cfg.eval_every == 0 || epoch == cfg.epochs - 1) {
      EvalOutcome out = evaluate_split(model, val_data, cfg.mc_eval, eval_base);
      rec.evaluated = true;
      rec.val_nll = out.nll_value;
      rec.val_acc = out.acc_value;
      if (out.nll_value < result.best_val_nll) {
        result.best_val_nll = out.nll_value;
        result.best_epoch = epoch;
        result.best_params = model.params();
      }
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    last_good = model.params();
  }

  if (!result.diverged) {
    model.params() = result.best_params;
    model.after_update();
  } else {
    result.best_params = model.params();
  }
  return result;
}

}  // namespace blora
