// SPDX-License-Identifier: Apache-2.0
#include "blora/bo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <utility>

#include "blora/error.hpp"
#include "blora/tape.hpp"
#include "blora/trainer.hpp"

namespace blora {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

Matrix kernel_matrix(const Matrix& xa, const Matrix& xb, const Matrix& log_ell,
                     double log_sf) {
  const int d = xa.rows();
  Matrix k(xa.cols(), xb.cols());
  std::vector<double> inv2(d);
  for (int r = 0; r < d; ++r) inv2[r] = std::exp(-2.0 * log_ell(r, 0));
  const double sf2 = std::exp(2.0 * log_sf);
  for (int i = 0; i < xa.cols(); ++i) {
    for (int j = 0; j < xb.cols(); ++j) {
      double q = 0.0;
      for (int r = 0; r < d; ++r) {
        const double diff = xa(r, i) - xb(r, j);
        q += inv2[r] * diff * diff;
      }
      k(i, j) = sf2 * std::exp(-0.5 * q);
    }
  }
  return k;
}

// Cholesky that tolerates positive-semidefinite input: a column whose
// residual pivot vanishes is zeroed instead of failing, so degenerate
// coordinates sample exactly at their mean.
Matrix chol_semidefinite(const Matrix& a) {
  const int n = a.rows();
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::fabs(a(i, i)));
  const double tol = 1e-12 * std::max(scale, 1e-300);
  Matrix l = Matrix::zeros(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d <= tol) continue;  // column stays zero
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

// True when a dominates b: <= everywhere, < somewhere (minimization).
bool dominates_min(const std::vector<double>& a, const std::vector<double>& b) {
  bool strict = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strict = true;
  }
  return strict;
}

// Exclusive hypervolume gained by one point over an existing set, all in
// maximization orientation: the box [ref, point] minus its part already
// covered, computed on the set clipped into that box.
double hv_contribution(const std::vector<double>& point,
                       const std::vector<std::vector<double>>& set,
                       const std::vector<double>& reference) {
  const std::size_t d = reference.size();
  double vol = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (point[i] <= reference[i]) return 0.0;
    vol *= point[i] - reference[i];
  }
  std::vector<std::vector<double>> clipped;
  for (const auto& p : set) {
    std::vector<double> q(d);
    bool inside = true;
    for (std::size_t i = 0; i < d; ++i) {
      q[i] = std::min(p[i], point[i]);
      if (q[i] <= reference[i]) inside = false;
    }
    if (inside) clipped.push_back(std::move(q));
  }
  const double covered = hypervolume(clipped, reference).volume;
  return std::max(0.0, vol - covered);
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

GpSurrogate::GpSurrogate(Matrix x, Matrix y, GpConfig cfg)
    : x_(std::move(x)), y_(std::move(y)), cfg_(cfg) {
  if (x_.cols() < 1) throw ParameterError("surrogate needs at least one observation");
  if (y_.rows() != x_.cols() || y_.cols() != 1)
    throw DimensionError("targets must be one column with one row per input");
  if (!(cfg_.noise_sd >= 0.0)) throw ParameterError("noise must be nonnegative");
  log_ell_ = Matrix::zeros(x_.rows(), 1);
  double sd = 0.0, mean = 0.0;
  for (int i = 0; i < y_.rows(); ++i) mean += y_(i, 0);
  mean /= y_.rows();
  for (int i = 0; i < y_.rows(); ++i) sd += (y_(i, 0) - mean) * (y_(i, 0) - mean);
  sd = std::sqrt(sd / y_.rows());
  log_sf_ = std::log(std::max(sd, 1e-3));
  refresh();
}

void GpSurrogate::set_hyperparameters(const Matrix& lengthscales, double signal_sd) {
  if (lengthscales.rows() != x_.rows() || lengthscales.cols() != 1)
    throw DimensionError("one lengthscale per input dimension");
  for (int i = 0; i < lengthscales.rows(); ++i)
    if (!(lengthscales(i, 0) > 0.0)) throw ParameterError("lengthscales must be positive");
  if (!(signal_sd > 0.0)) throw ParameterError("signal scale must be positive");
  for (int i = 0; i < lengthscales.rows(); ++i) log_ell_(i, 0) = std::log(lengthscales(i, 0));
  log_sf_ = std::log(signal_sd);
  refresh();
}

void GpSurrogate::refresh() {
  Matrix ky = kernel_matrix(x_, x_, log_ell_, log_sf_);
  const double n2 = cfg_.noise_sd * cfg_.noise_sd;
  for (int i = 0; i < ky.rows(); ++i) ky(i, i) += n2;
  try {
    chol_ = cholesky(ky);
  } catch (const DecompositionError&) {
    double jitter = 0.0;
    for (int i = 0; i < ky.rows(); ++i) jitter = std::max(jitter, ky(i, i));
    jitter = 1e-10 * std::max(jitter, 1.0);
    for (int i = 0; i < ky.rows(); ++i) ky(i, i) += jitter;
    chol_ = cholesky(ky);  // second failure propagates
  }
  Matrix centered = y_;
  for (int i = 0; i < centered.rows(); ++i) centered(i, 0) -= cfg_.prior_mean;
  alpha_ = solve_psd_with(chol_, centered);
}

void GpSurrogate::fit() {
  const int n = x_.cols();
  const int d = x_.rows();

  // Fixed per-dimension squared-difference matrices.
  std::vector<Matrix> sq(d, Matrix(n, n));
  for (int r = 0; r < d; ++r)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double diff = x_(r, i) - x_(r, j);
        sq[r](i, j) = diff * diff;
      }
  Matrix centered = y_;
  for (int i = 0; i < n; ++i) centered(i, 0) -= cfg_.prior_mean;
  Matrix noise_eye = Matrix::zeros(n, n);
  for (int i = 0; i < n; ++i) noise_eye(i, i) = cfg_.noise_sd * cfg_.noise_sd;

  auto nll_and_grads = [&](ParamStore& store, std::map<std::string, Matrix>* grads) {
    ad::Tape t;
    ad::Var ones_col = t.input(Matrix::constant(n, 1, 1.0));
    ad::Var ones_row = t.input(Matrix::constant(1, n, 1.0));
    auto broadcast = [&](ad::Var s) { return t.matmul(t.matmul(ones_col, s), ones_row); };
    ad::Var log_sf = t.param("log_sf", store.at("log_sf"));
    ad::Var expo = broadcast(t.scale(log_sf, 2.0));
    for (int r = 0; r < d; ++r) {
      const std::string name = "log_ell_" + std::to_string(r);
      ad::Var inv2 = t.exp(t.scale(t.param(name, store.at(name)), -2.0));
      expo = t.sub(expo, t.scale(t.mul(broadcast(inv2), t.input(sq[r])), 0.5));
    }
    ad::Var ky = t.add(t.exp(expo), t.input(noise_eye));
    ad::Var yv = t.input(centered);
    ad::Var quad = ad::dot_all(t, yv, t.solve_psd(ky, yv, /*jitter_retry=*/true));
    ad::Var nll = t.scale(t.add(quad, t.logdet_psd(ky, /*jitter_retry=*/true)), 0.5);
    if (grads != nullptr) *grads = t.gradients(nll);
    return t.value(nll)(0, 0);
  };

  RandomStream rng = RandomStream::derive(cfg_.seed, "gp/fit");
  double best_nll = std::numeric_limits<double>::infinity();
  Matrix best_ell = log_ell_;
  double best_sf = log_sf_;

  for (int restart = 0; restart < std::max(1, cfg_.fit_restarts); ++restart) {
    ParamStore store;
    for (int r = 0; r < d; ++r) {
      double start = restart == 0 ? 0.0 : 0.8 * rng.normal();
      store.add("log_ell_" + std::to_string(r), Matrix::constant(1, 1, start));
    }
    const double sf0 = restart == 0 ? log_sf_ : log_sf_ + 0.5 * rng.normal();
    store.add("log_sf", Matrix::constant(1, 1, sf0));
    try {
      AdamW opt(cfg_.fit_lr, 0.9, 0.999, 1e-8, 0.0);
      for (int iter = 0; iter < cfg_.fit_iters; ++iter) {
        std::map<std::string, Matrix> grads;
        nll_and_grads(store, &grads);
        opt.step(store, grads);
      }
      const double final_nll = nll_and_grads(store, nullptr);
      if (std::isfinite(final_nll) && final_nll < best_nll) {
        best_nll = final_nll;
        for (int r = 0; r < d; ++r)
          best_ell(r, 0) = store.at("log_ell_" + std::to_string(r))(0, 0);
        best_sf = store.at("log_sf")(0, 0);
      }
    } catch (const Error&) {
      continue;  // a wild restart left the feasible region; keep the best
    }
  }
  log_ell_ = best_ell;
  log_sf_ = best_sf;
  refresh();
}

std::pair<Matrix, Matrix> GpSurrogate::posterior(const Matrix& queries) const {
  if (queries.rows() != x_.rows())
    throw DimensionError("queries must have one row per input dimension");
  if (queries.cols() < 1) throw ParameterError("empty query batch");
  Matrix kqx = kernel_matrix(queries, x_, log_ell_, log_sf_);
  Matrix mean = matmul(kqx, alpha_);
  for (int i = 0; i < mean.rows(); ++i) mean(i, 0) += cfg_.prior_mean;
  Matrix v = solve_lower(chol_, transpose(kqx));  // n x q
  Matrix cov = kernel_matrix(queries, queries, log_ell_, log_sf_) - matmul(transpose(v), v);
  for (int i = 0; i < cov.rows(); ++i)
    for (int j = i + 1; j < cov.cols(); ++j) {
      const double s = 0.5 * (cov(i, j) + cov(j, i));
      cov(i, j) = s;
      cov(j, i) = s;
    }
  for (int i = 0; i < cov.rows(); ++i) cov(i, i) = std::max(cov(i, i), 0.0);
  return {mean, cov};
}

Matrix GpSurrogate::predictive_variance(const Matrix& queries) const {
  auto [mean, cov] = posterior(queries);
  (void)mean;
  Matrix var(cov.rows(), 1);
  for (int i = 0; i < cov.rows(); ++i)
    var(i, 0) = cov(i, i) + cfg_.noise_sd * cfg_.noise_sd;
  return var;
}

double GpSurrogate::log_marginal() const {
  double quad = 0.0;
  for (int i = 0; i < y_.rows(); ++i) quad += (y_(i, 0) - cfg_.prior_mean) * alpha_(i, 0);
  double logdet = 0.0;
  for (int i = 0; i < chol_.rows(); ++i) logdet += 2.0 * std::log(chol_(i, i));
  return -0.5 * (quad + logdet + y_.rows() * kLogTwoPi);
}

Matrix GpSurrogate::lengthscales() const {
  Matrix ell(log_ell_.rows(), 1);
  for (int i = 0; i < ell.rows(); ++i) ell(i, 0) = std::exp(log_ell_(i, 0));
  return ell;
}

double GpSurrogate::signal_sd() const { return std::exp(log_sf_); }

ParetoArchive::ParetoArchive(int x_dim, int f_dim, int c_dim)
    : x_dim_(x_dim), f_dim_(f_dim), c_dim_(c_dim) {
  if (x_dim < 1 || f_dim < 1 || c_dim < 0) throw ParameterError("bad archive dimensions");
}

void ParetoArchive::add(const std::vector<double>& x, const std::vector<double>& f,
                        const std::vector<double>& c, int round) {
  if (static_cast<int>(x.size()) != x_dim_ || static_cast<int>(f.size()) != f_dim_ ||
      static_cast<int>(c.size()) != c_dim_)
    throw DimensionError("archive entry does not match the declared dimensions");
  ArchiveEntry e;
  e.x = x;
  e.f = f;
  e.c = c;
  e.round = round;
  e.feasible = true;
  for (double v : c)
    if (v > 0.0) e.feasible = false;
  entries_.push_back(std::move(e));
}

std::vector<int> ParetoArchive::feasible_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (entries_[i].feasible) out.push_back(i);
  return out;
}

std::vector<int> ParetoArchive::feasible_front() const {
  const std::vector<int> feas = feasible_indices();
  std::vector<std::vector<double>> points;
  points.reserve(feas.size());
  for (int i : feas) points.push_back(entries_[i].f);
  std::vector<int> keep = pareto_filter(points);
  std::vector<int> out;
  out.reserve(keep.size());
  for (int k : keep) out.push_back(feas[k]);
  return out;
}

Matrix ParetoArchive::x_of(const std::vector<int>& idx) const {
  Matrix out(x_dim_, static_cast<int>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (int r = 0; r < x_dim_; ++r) out(r, static_cast<int>(j)) = entries_[idx[j]].x[r];
  return out;
}

Matrix ParetoArchive::column_of(const std::vector<int>& idx, int objective) const {
  if (objective < 0 || objective >= f_dim_) throw ParameterError("objective out of range");
  Matrix out(static_cast<int>(idx.size()), 1);
  for (std::size_t j = 0; j < idx.size(); ++j)
    out(static_cast<int>(j), 0) = entries_[idx[j]].f[objective];
  return out;
}

std::string ParetoArchive::csv() const {
  std::ostringstream out;
  out << std::setprecision(12);
  for (int r = 0; r < x_dim_; ++r) out << "x" << r << ",";
  for (int m = 0; m < f_dim_; ++m) out << "f" << m << ",";
  for (int j = 0; j < c_dim_; ++j) out << "c" << j << ",";
  out << "feasible,round\n";
  for (const auto& e : entries_) {
    for (double v : e.x) out << v << ",";
    for (double v : e.f) out << v << ",";
    for (double v : e.c) out << v << ",";
    out << (e.feasible ? 1 : 0) << "," << e.round << "\n";
  }
  return out.str();
}

std::string ParetoArchive::pareto_csv() const {
  if (x_dim_ != 2 || f_dim_ != 3)
    throw ParameterError("front report expects planar inputs and three objectives");
  std::ostringstream out;
  out << std::setprecision(12);
  out << "candidate,acc,nll,ece,lr,wd\n";
  for (int i : feasible_front()) {
    const ArchiveEntry& e = entries_[i];
    out << i << "," << -e.f[2] << "," << e.f[1] << "," << e.f[0] << ","
        << std::pow(10.0, e.x[0]) << "," << std::pow(10.0, e.x[1]) << "\n";
  }
  return out.str();
}

std::vector<int> pareto_filter(const std::vector<std::vector<double>>& points) {
  const int n = static_cast<int>(points.size());
  for (const auto& p : points)
    if (p.size() != points[0].size()) throw DimensionError("ragged objective vectors");
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    bool dominated = false;
    for (int j = 0; j < n && !dominated; ++j)
      if (j != i && dominates_min(points[j], points[i])) dominated = true;
    if (!dominated) out.push_back(i);
  }
  return out;
}

HvResult hypervolume(const std::vector<std::vector<double>>& points,
                     const std::vector<double>& reference) {
  const int d = static_cast<int>(reference.size());
  if (d < 1 || d > 3) throw ParameterError("hypervolume supports one to three objectives");
  HvResult result;
  std::vector<std::vector<double>> kept;
  for (const auto& p : points) {
    if (static_cast<int>(p.size()) != d)
      throw DimensionError("point dimension does not match the reference");
    bool above = true;
    for (int i = 0; i < d; ++i)
      if (p[i] <= reference[i]) above = false;
    if (above)
      kept.push_back(p);
    else
      result.clipped = true;
  }
  if (kept.empty()) return result;

  // Coordinate grid: every cell is either fully covered or fully uncovered.
  std::vector<std::vector<double>> coords(d);
  for (int i = 0; i < d; ++i) {
    coords[i].push_back(reference[i]);
    for (const auto& p : kept) coords[i].push_back(p[i]);
    std::sort(coords[i].begin(), coords[i].end());
    coords[i].erase(std::unique(coords[i].begin(), coords[i].end()), coords[i].end());
  }
  std::vector<int> cell(d, 0);
  while (true) {
    double vol = 1.0;
    bool valid = true;
    std::vector<double> upper(d);
    for (int i = 0; i < d; ++i) {
      if (cell[i] + 1 >= static_cast<int>(coords[i].size())) {
        valid = false;
        break;
      }
      upper[i] = coords[i][cell[i] + 1];
      vol *= upper[i] - coords[i][cell[i]];
    }
    if (valid) {
      for (const auto& p : kept) {
        bool covers = true;
        for (int i = 0; i < d; ++i)
          if (p[i] < upper[i]) {
            covers = false;
            break;
          }
        if (covers) {
          result.volume += vol;
          break;
        }
      }
    }
    // Odometer increment over cells.
    int i = 0;
    for (; i < d; ++i) {
      if (++cell[i] + 1 < static_cast<int>(coords[i].size())) break;
      cell[i] = 0;
    }
    if (i == d) break;
  }
  return result;
}

std::vector<double> reference_point(const std::vector<std::vector<double>>& feasible_points,
                                    double margin) {
  if (feasible_points.empty())
    throw ParameterError("no feasible observations yet; continue space-filling");
  std::vector<double> r = feasible_points[0];
  for (const auto& p : feasible_points) {
    if (p.size() != r.size()) throw DimensionError("ragged objective vectors");
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::min(r[i], p[i]);
  }
  for (double& v : r) v -= margin;
  return r;
}

std::vector<double> reference_point(const ParetoArchive& archive, double margin) {
  std::vector<std::vector<double>> negated;
  for (int i : archive.feasible_indices()) {
    std::vector<double> g = archive.entries()[i].f;
    for (double& v : g) v = -v;
    negated.push_back(std::move(g));
  }
  return reference_point(negated, margin);
}

double prob_feasible(const std::vector<const GpSurrogate*>& constraints,
                     const Matrix& queries) {
  double prod = 1.0;
  for (const GpSurrogate* c : constraints) {
    auto [mean, cov] = c->posterior(queries);
    for (int q = 0; q < mean.rows(); ++q) {
      const double var = cov(q, q);
      double factor;
      if (var <= 1e-24) {
        const double mu = mean(q, 0);
        factor = mu > 0.0 ? 0.0 : (mu < 0.0 ? 1.0 : 0.5);
      } else {
        factor = normal_cdf(-mean(q, 0) / std::sqrt(var));
      }
      prod *= factor;
      if (prod == 0.0) return 0.0;
    }
  }
  return prod;
}

double qnehvi_acquire(const std::vector<const GpSurrogate*>& objectives,
                      const std::vector<const GpSurrogate*>& constraints,
                      const ParetoArchive& archive, const Matrix& candidates,
                      const std::vector<double>& reference, int t_samples,
                      RandomStream& rng) {
  if (objectives.empty()) throw ParameterError("no objective surrogates");
  if (t_samples < 1) throw ParameterError("sample count must be at least 1");
  if (static_cast<int>(objectives.size()) != archive.f_dim() ||
      objectives.size() != reference.size())
    throw DimensionError("one objective surrogate per archived objective");
  const std::vector<int> feas = archive.feasible_indices();
  if (feas.empty()) throw ParameterError("acquisition needs a feasible observation");

  const int nh = static_cast<int>(feas.size());
  const int q = candidates.cols();
  const int m = static_cast<int>(objectives.size());
  Matrix joint(archive.x_dim(), nh + q);
  Matrix hist_x = archive.x_of(feas);
  for (int j = 0; j < nh; ++j)
    for (int r = 0; r < joint.rows(); ++r) joint(r, j) = hist_x(r, j);
  for (int j = 0; j < q; ++j)
    for (int r = 0; r < joint.rows(); ++r) joint(r, nh + j) = candidates(r, j);

  std::vector<Matrix> means(m), chols(m);
  for (int i = 0; i < m; ++i) {
    auto [mean, cov] = objectives[i]->posterior(joint);
    means[i] = mean;
    chols[i] = chol_semidefinite(cov);
  }

  const double pof = prob_feasible(constraints, candidates);
  if (pof == 0.0) return 0.0;

  double accum = 0.0;
  Matrix draw(nh + q, m);
  for (int t = 0; t < t_samples; ++t) {
    for (int i = 0; i < m; ++i) {
      Matrix z = Matrix::randn(nh + q, 1, rng);
      Matrix s = means[i] + matmul(chols[i], z);
      for (int j = 0; j < nh + q; ++j) draw(j, i) = s(j, 0);
    }
    // Non-dominated subset of the historical draws, then negate for volume.
    std::vector<std::vector<double>> hist(nh, std::vector<double>(m));
    for (int j = 0; j < nh; ++j)
      for (int i = 0; i < m; ++i) hist[j][i] = draw(j, i);
    std::vector<std::vector<double>> front;
    for (int k : pareto_filter(hist)) {
      std::vector<double> g = hist[k];
      for (double& v : g) v = -v;
      front.push_back(std::move(g));
    }
    double gain;
    if (q == 1) {
      std::vector<double> cand(m);
      for (int i = 0; i < m; ++i) cand[i] = -draw(nh, i);
      gain = hv_contribution(cand, front, reference);
    } else {
      std::vector<std::vector<double>> joined = front;
      for (int j = 0; j < q; ++j) {
        std::vector<double> cand(m);
        for (int i = 0; i < m; ++i) cand[i] = -draw(nh + j, i);
        joined.push_back(std::move(cand));
      }
      gain = std::max(0.0, hypervolume(joined, reference).volume -
                               hypervolume(front, reference).volume);
    }
    accum += gain;
  }
  return (accum / t_samples) * pof;
}

Matrix sobol_grid(int n, RandomStream& rng) {
  if (n < 1) throw ParameterError("need at least one point");
  // First dimension: radical inversion in base 2. Second dimension: direction
  // numbers from the degree-2 primitive polynomial over GF(2).
  std::uint32_t v1[32], v2[32];
  std::uint32_t m_prev2 = 1, m_prev1 = 3;
  v1[0] = 1u << 31;
  v2[0] = static_cast<std::uint32_t>(m_prev2) << 31;
  v1[1] = 1u << 30;
  v2[1] = static_cast<std::uint32_t>(m_prev1) << 30;
  for (int k = 2; k < 32; ++k) {
    v1[k] = 1u << (31 - k);
    const std::uint32_t mk = (2u * m_prev1) ^ (4u * m_prev2) ^ m_prev2;
    v2[k] = mk << (31 - k);
    m_prev2 = m_prev1;
    m_prev1 = mk;
  }
  const std::uint32_t shift1 = static_cast<std::uint32_t>(rng.next_u64() >> 32);
  const std::uint32_t shift2 = static_cast<std::uint32_t>(rng.next_u64() >> 32);

  Matrix out(2, n);
  std::uint32_t x1 = 0, x2 = 0;
  const double denom = 4294967296.0;
  for (int i = 0; i < n; ++i) {
    out(0, i) = (x1 ^ shift1) / denom;
    out(1, i) = (x2 ^ shift2) / denom;
    std::uint32_t idx = static_cast<std::uint32_t>(i + 1);
    int c = 0;
    while ((idx & 1u) == 0u) {
      idx >>= 1;
      ++c;
    }
    x1 ^= v1[c];
    x2 ^= v2[c];
  }
  return out;
}

std::vector<double> propose(const ParetoArchive& archive,
                            const std::vector<const GpSurrogate*>& objectives,
                            const std::vector<const GpSurrogate*>& constraints,
                            const BoBounds& bounds, int budget, int t_samples,
                            double ref_margin, RandomStream& rng) {
  if (budget < 1) throw ParameterError("candidate budget must be at least 1");
  if (archive.x_dim() != 2) throw ParameterError("the search domain is planar");
  Matrix u = sobol_grid(budget, rng);
  Matrix cands(2, budget);
  for (int j = 0; j < budget; ++j) {
    cands(0, j) = bounds.lo_log_lr + u(0, j) * (bounds.hi_log_lr - bounds.lo_log_lr);
    cands(1, j) = bounds.lo_log_wd + u(1, j) * (bounds.hi_log_wd - bounds.lo_log_wd);
  }
  if (archive.feasible_indices().empty()) return {cands(0, 0), cands(1, 0)};

  const std::vector<double> ref = reference_point(archive, ref_margin);
  const RandomStream acq_base = rng;  // common draws across candidates
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < budget; ++j) {
    RandomStream r = acq_base;
    Matrix one = cands.col(j);
    const double val =
        qnehvi_acquire(objectives, constraints, archive, one, ref, t_samples, r);
    if (val > best_val) {
      best_val = val;
      best = j;
    }
  }
  return {cands(0, best), cands(1, best)};
}

int select_operating_point(const ParetoArchive& archive) {
  const std::vector<int> feas = archive.feasible_indices();
  if (feas.empty()) throw ParameterError("no feasible observations to select from");
  const std::vector<int> front = archive.feasible_front();

  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  double best_tie = std::numeric_limits<double>::infinity();
  for (int i : feas) {
    double dist = std::numeric_limits<double>::infinity();
    for (int j : front) {
      double sq = 0.0;
      for (int k = 0; k < archive.f_dim(); ++k) {
        const double diff = archive.entries()[i].f[k] - archive.entries()[j].f[k];
        sq += diff * diff;
      }
      dist = std::min(dist, std::sqrt(sq));
    }
    const double tie = archive.f_dim() >= 2 ? archive.entries()[i].f[1]
                                            : archive.entries()[i].f[0];
    if (dist < best_dist - 1e-12 ||
        (std::fabs(dist - best_dist) <= 1e-12 && tie < best_tie)) {
      best = i;
      best_dist = dist;
      best_tie = tie;
    }
  }
  return best;
}

}  // namespace blora
