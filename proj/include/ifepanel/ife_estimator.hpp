#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/factor_pca.hpp"
#include "ifepanel/panel.hpp"
#include "ifepanel/random.hpp"

namespace ifepanel {

struct IfeOptions {
  Index r = 0;  // number of factors used in estimation
  double beta_tol = 1e-8;
  double obj_tol = 1e-8;
  int max_outer = 10000;
  int n_starts = 1;
  std::uint64_t rng_seed = 0;
  /// Run EM to convergence (from W_perp = 0) inside every outer iteration
  /// instead of carrying the imputation across iterations.
  bool nested_em = false;
  EmOptions em{};
  bool throw_on_failure = true;
  /// Overrides the two-way within OLS starting value for the first start.
  std::optional<Vector> start;
};

struct IfeFit {
  Vector beta;
  FactorStructure factor;
  Matrix residuals;  // e_hat on the observed cells, zero elsewhere
  Matrix completed;  // EM-augmented W(beta_hat)
  double objective = 0.0;
  double sigma2 = 0.0;
  bool converged = false;
  int outer_iterations = 0;
  int start_index_of_best = 0;
  std::vector<double> objective_path;
  std::vector<Index> weak_units;  // units with |D_i| <= R
  Index r = 0;
};

namespace detail {

/// Pooled OLS over the observed cells with a cached factorization of X'X.
class PooledOls {
 public:
  explicit PooledOls(const PanelData& d) : d_(&d) {
    const Index k = d.n_regressors();
    xtx_ = Matrix::Zero(k, k);
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b <= a; ++b) xtx_(a, b) = xtx_(b, a) = d.x(a).cwiseProduct(d.x(b)).sum();
    Eigen::SelfAdjointEigenSolver<Matrix> es(xtx_, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff(), lo = es.eigenvalues().minCoeff();
    rcond_ = hi > 0.0 ? lo / hi : 0.0;
    ldlt_.compute(xtx_);
  }

  double rcond() const { return rcond_; }
  const Matrix& xtx() const { return xtx_; }

  /// Coefficients of the regression of target (observed cells) on x.
  Vector solve(const Matrix& target) const {
    const Index k = d_->n_regressors();
    Vector xty(k);
    const Matrix masked = d_->mask().select(target, 0.0);
    for (Index a = 0; a < k; ++a) xty(a) = d_->x(a).cwiseProduct(masked).sum();
    return ldlt_.solve(xty);
  }

 private:
  const PanelData* d_;
  Matrix xtx_;
  Eigen::LDLT<Matrix> ldlt_;
  double rcond_ = 0.0;
};

constexpr double kCollinearRcond = 1e-12;

struct StartValues {
  Vector beta;
  Vector se;
};

/// Two-way within OLS coefficients and their homoskedastic standard errors.
/// Falls back to pooled OLS when the within regressors are collinear.
inline StartValues within_ols(const PanelData& d) {
  auto from = [](const PanelData& p, const PooledOls& ols) {
    StartValues s;
    s.beta = ols.solve(p.y());
    Matrix resid = p.residual_matrix(s.beta);
    const double dof = std::max<double>(1.0, static_cast<double>(p.n_obs() - p.n_regressors()));
    const double s2 = p.mask().select(resid, 0.0).squaredNorm() / dof;
    const Matrix inv = ols.xtx().ldlt().solve(Matrix::Identity(p.n_regressors(), p.n_regressors()));
    s.se = (s2 * inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
    return s;
  };
  try {
    const PanelData within = two_way_within(d);
    PooledOls ols(within);
    if (ols.rcond() >= kCollinearRcond) return from(within, ols);
  } catch (const Error&) {
  }
  PooledOls ols(d);
  return from(d, ols);
}

inline bool relative_small(double change, double scale, double tol) { return change <= tol * std::abs(scale); }

struct SingleRun {
  Vector beta;
  Matrix perp;
  std::vector<double> path;
  int iterations = 0;
  bool converged = false;
};

inline SingleRun run_alternation(const PanelData& d, const PooledOls& ols, const Vector& start, const IfeOptions& opts) {
  SingleRun run;
  run.beta = start;
  run.perp = Matrix::Zero(d.n_units(), d.n_periods());
  const bool complete = d.balanced();
  const double n = static_cast<double>(d.n_obs());
  double previous = std::numeric_limits<double>::infinity();
  EmOptions nested = opts.em;
  nested.throw_on_failure = false;

  for (int iter = 1; iter <= opts.max_outer; ++iter) {
    const Matrix w = d.residual_matrix(run.beta);
    Matrix common;
    if (opts.nested_em) {
      EmResult em = em_impute(d.masked(w), opts.r, nested);
      common = em.factors.common_component();
      run.perp = projection_d_perp(common, d.mask());
    } else {
      const FactorStructure fs = pca_factors(complete ? w : Matrix(w + run.perp), opts.r);
      common = fs.common_component();
      if (!complete) run.perp = projection_d_perp(common, d.mask());
    }
    const Vector next = ols.solve(d.y() - common);
    const double obj = d.mask().select(d.residual_matrix(next) - common, 0.0).squaredNorm() / n;
    run.path.push_back(obj);
    run.iterations = iter;
    const bool beta_done = relative_small((next - run.beta).norm(), next.norm(), opts.beta_tol);
    const bool obj_done = relative_small(std::abs(previous - obj), obj, opts.obj_tol);
    run.beta = next;
    previous = obj;
    if (beta_done && obj_done) {
      run.converged = true;
      break;
    }
  }
  return run;
}

}  // namespace detail

/// Q(beta): EM-augment W(beta) (from W_perp = 0) and return the scaled sum of
/// the eigenvalues of W~'W~ beyond the first r.
inline double profile_objective(const PanelData& d, const Vector& beta, Index r, const EmOptions& em = {}) {
  const EmResult res = em_impute(d.masked(d.residual_matrix(beta)), r, em);
  return tail_sum_of(res.completed, r) / static_cast<double>(d.n_obs());
}

/// Assembles the fit at a given beta: converged EM factors, residuals, objective.
inline IfeFit finalize_fit(const PanelData& d, const Vector& beta, Index r, const EmOptions& em,
                           const Matrix* warm_start = nullptr) {
  IfeFit fit;
  fit.r = r;
  fit.beta = beta;
  const MaskedMatrix w = d.masked(d.residual_matrix(beta));
  EmResult res = em_impute(w, r, em, warm_start);
  fit.factor = std::move(res.factors);
  const Matrix common = fit.factor.common_component();
  fit.residuals = d.mask().select(w.values - common, 0.0);
  fit.completed = std::move(res.completed);
  const double n = static_cast<double>(d.n_obs());
  fit.sigma2 = fit.residuals.squaredNorm() / n;
  fit.objective = tail_sum_of(fit.completed, r) / n;
  for (Index i = 0; i < d.n_units(); ++i)
    if (static_cast<Index>(d.unit_rows(i).size()) <= r) fit.weak_units.push_back(i);
  return fit;
}

/// Interactive fixed effects estimator: alternates pooled OLS for beta given
/// the common component and EM factor extraction given beta, from one or more
/// starting values; returns the start with the smallest objective.
inline IfeFit fit(const PanelData& d, const IfeOptions& opts) {
  if (d.n_regressors() < 1) throw Error(ErrorKind::InvalidArgument, "at least one regressor is required");
  if (opts.r < 0 || opts.r > std::min(d.n_units(), d.n_periods()))
    throw Error(ErrorKind::RankTooLarge, "rank exceeds min(N,T)");
  if (opts.n_starts < 1 || opts.beta_tol <= 0 || opts.obj_tol <= 0 || opts.max_outer < 1)
    throw Error(ErrorKind::InvalidArgument, "invalid estimation options");
  const detail::PooledOls ols(d);
  if (ols.rcond() < detail::kCollinearRcond) throw Error(ErrorKind::Collinear, "regressors are collinear on D");

  detail::StartValues base;
  if (opts.start) {
    if (opts.start->size() != d.n_regressors()) throw Error(ErrorKind::ShapeMismatch, "start has wrong length");
    base.beta = *opts.start;
    base.se = Vector::Zero(d.n_regressors());
    if (opts.n_starts > 1) base.se = detail::within_ols(d).se;
  } else {
    base = detail::within_ols(d);
  }

  std::optional<detail::SingleRun> best;
  int best_index = 0;
  for (int s = 0; s < opts.n_starts; ++s) {
    Vector start = base.beta;
    if (s > 0) {
      Rng rng = make_rng(opts.rng_seed, {0x5747A27ULL, static_cast<std::uint64_t>(s)});
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Index k = 0; k < start.size(); ++k) start(k) += 2.0 * base.se(k) * normal(rng);
    }
    detail::SingleRun run = detail::run_alternation(d, ols, start, opts);
    if (!best || run.path.back() < best->path.back()) {
      best = std::move(run);
      best_index = s;
    }
  }

  EmOptions final_em = opts.em;
  final_em.throw_on_failure = false;
  IfeFit out = finalize_fit(d, best->beta, opts.r, final_em, opts.nested_em ? nullptr : &best->perp);
  out.converged = best->converged;
  out.outer_iterations = best->iterations;
  out.start_index_of_best = best_index;
  out.objective_path = std::move(best->path);
  if (!out.converged && opts.throw_on_failure)
    throw NoConvergence<IfeFit>("estimator did not converge in " + std::to_string(opts.max_outer) + " iterations",
                                out);
  return out;
}

struct ObjectiveConsistency {
  double reported = 0.0;
  double recomputed = 0.0;
  double relative_discrepancy = 0.0;
  bool stale = false;
};

/// Recomputes the profile objective at beta_hat and compares it with the
/// value stored in the fit.
inline ObjectiveConsistency objective_at_convergence_consistency(const IfeFit& fit, const PanelData& d,
                                                                 const EmOptions& em = {}) {
  ObjectiveConsistency c;
  c.reported = fit.objective;
  EmOptions quiet = em;
  quiet.throw_on_failure = false;
  c.recomputed = profile_objective(d, fit.beta, fit.r, quiet);
  const double diff = std::abs(c.recomputed - c.reported);
  const double scale = std::max(std::abs(c.reported), std::abs(c.recomputed));
  c.relative_discrepancy = scale > 0.0 ? diff / scale : 0.0;
  c.stale = c.relative_discrepancy > 1e-6;
  return c;
}

}  // namespace ifepanel
