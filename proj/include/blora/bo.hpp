// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blora/matrix.hpp"
#include "blora/rng.hpp"

namespace blora {

// Standard normal CDF.
double normal_cdf(double z);

struct GpConfig {
  double noise_sd = 1e-3;  // observation noise, fixed during fitting
  double prior_mean = 0.0;
  int fit_restarts = 6;
  int fit_iters = 120;
  double fit_lr = 0.05;
  std::uint64_t seed = 0;
};

// Squared-exponential surrogate with one lengthscale per input dimension and
// a constant prior mean. Hyperparameters are either set directly or fit by
// multi-start gradient ascent on the marginal likelihood.
class GpSurrogate {
 public:
  // x holds one input per column (dim x n); y is n x 1.
  GpSurrogate(Matrix x, Matrix y, GpConfig cfg = {});

  void set_hyperparameters(const Matrix& lengthscales, double signal_sd);
  void fit();

  // Exact conditional mean (q x 1) and covariance (q x q) at the queries
  // (dim x q). Covariance diagonal is floored at zero.
  std::pair<Matrix, Matrix> posterior(const Matrix& queries) const;
  // Marginal variance of a noisy observation at each query: the posterior
  // diagonal plus the observation noise.
  Matrix predictive_variance(const Matrix& queries) const;

  double log_marginal() const;  // at the current hyperparameters

  int dim() const { return x_.rows(); }
  int n_points() const { return x_.cols(); }
  Matrix lengthscales() const;
  double signal_sd() const;
  double noise_sd() const { return cfg_.noise_sd; }
  double prior_mean() const { return cfg_.prior_mean; }
  const Matrix& train_x() const { return x_; }
  const Matrix& train_y() const { return y_; }

 private:
  void refresh();

  Matrix x_;
  Matrix y_;
  GpConfig cfg_;
  Matrix log_ell_;        // dim x 1
  double log_sf_ = 0.0;
  Matrix chol_;           // Cholesky of K + noise^2 I
  Matrix alpha_;          // (K + noise^2 I)^{-1} (y - prior_mean)
};

// One evaluated configuration: inputs, objective vector (minimization
// orientation), constraint values (feasible when all are <= 0).
struct ArchiveEntry {
  std::vector<double> x;
  std::vector<double> f;
  std::vector<double> c;
  bool feasible = false;
  int round = 0;
};

class ParetoArchive {
 public:
  ParetoArchive(int x_dim, int f_dim, int c_dim);

  void add(const std::vector<double>& x, const std::vector<double>& f,
           const std::vector<double>& c, int round);

  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  int size() const { return static_cast<int>(entries_.size()); }
  int x_dim() const { return x_dim_; }
  int f_dim() const { return f_dim_; }
  int c_dim() const { return c_dim_; }

  std::vector<int> feasible_indices() const;
  // Feasible entries not dominated by another feasible entry.
  std::vector<int> feasible_front() const;

  Matrix x_of(const std::vector<int>& idx) const;  // x_dim x k
  Matrix column_of(const std::vector<int>& idx, int objective) const;  // k x 1

  std::string csv() const;
  // Objective order (ece, nll, -acc) and inputs (log10 lr, log10 wd) turned
  // into a report of the feasible front: candidate, acc, nll, ece, lr, wd.
  std::string pareto_csv() const;

 private:
  int x_dim_, f_dim_, c_dim_;
  std::vector<ArchiveEntry> entries_;
};

// Indices of points not dominated by any other (minimization orientation;
// dominance needs <= everywhere and < somewhere, so duplicates survive).
std::vector<int> pareto_filter(const std::vector<std::vector<double>>& points);

struct HvResult {
  double volume = 0.0;
  bool clipped = false;  // some point failed to dominate the reference
};

// Dominated hypervolume in maximization orientation, exact for up to three
// objectives. Points not strictly above the reference are dropped and
// flagged.
HvResult hypervolume(const std::vector<std::vector<double>>& points,
                     const std::vector<double>& reference);

// Componentwise minimum minus margin over feasible points already in
// maximization orientation.
std::vector<double> reference_point(const std::vector<std::vector<double>>& feasible_points,
                                    double margin);
// Negates the archive's feasible objectives and applies the rule above.
std::vector<double> reference_point(const ParetoArchive& archive, double margin);

// Product over queries (dim x q) and constraints of Phi(-mean / sd). A
// degenerate posterior contributes the pointwise limit (0, 1/2, or 1).
double prob_feasible(const std::vector<const GpSurrogate*>& constraints,
                     const Matrix& queries);

// Feasibility-weighted expected hypervolume improvement of the candidate
// batch (dim x q), estimated with t_samples joint posterior draws over the
// feasible archive points and the candidates.
double qnehvi_acquire(const std::vector<const GpSurrogate*>& objectives,
                      const std::vector<const GpSurrogate*>& constraints,
                      const ParetoArchive& archive, const Matrix& candidates,
                      const std::vector<double>& reference, int t_samples,
                      RandomStream& rng);

// Digitally shifted two-dimensional low-discrepancy point set in [0,1)^2,
// one point per column.
Matrix sobol_grid(int n, RandomStream& rng);

// Search domain in log10 space.
struct BoBounds {
  double lo_log_lr = -5.0;
  double hi_log_lr = -2.6989700043360187;  // log10(2e-3)
  double lo_log_wd = -2.0;
  double hi_log_wd = -0.3010299956639812;  // log10(0.5)
};

// Argmax of the acquisition over a low-discrepancy candidate set; with no
// feasible observation yet, falls back to the first space-filling candidate.
std::vector<double> propose(const ParetoArchive& archive,
                            const std::vector<const GpSurrogate*>& objectives,
                            const std::vector<const GpSurrogate*>& constraints,
                            const BoBounds& bounds, int budget, int t_samples,
                            double ref_margin, RandomStream& rng);

// Final operating point: the feasible entry nearest to the feasible front in
// objective space, ties broken by the lower second objective, then by the
// lower index.
int select_operating_point(const ParetoArchive& archive);

}  // namespace blora
