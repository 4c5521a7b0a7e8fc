#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/factor_pca.hpp"
#include "ifepanel/ife_estimator.hpp"
#include "ifepanel/panel.hpp"
#include "ifepanel/residualize.hpp"

namespace ifepanel {

struct NnOptions {
  int max_iter = 5000;
  double tol = 1e-7;      // relative improvement of the best objective over `window` iterations
  int window = 100;
  double initial_step = 0.0;  // c in c/sqrt(j); 0 picks 10 x the within-OLS standard error norm
  bool throw_on_failure = false;
};

struct NnFit {
  Vector beta_star;
  double nuclear_objective = 0.0;
  std::vector<double> solver_path;  // best objective after each iteration
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct NuclearEval {
  double objective = 0.0;
  Vector subgradient;
};

/// (1/2n) * nuclear norm of P_D(W(beta)) and a subgradient in beta.
inline NuclearEval nuclear_eval(const PanelData& d, const Vector& beta, bool with_gradient) {
  const Matrix w = d.residual_matrix(beta);
  const double n = static_cast<double>(d.n_obs());
  const GramSpectrum s = gram_spectrum(w, with_gradient);
  const Vector sv = s.eigenvalues.cwiseMax(0.0).cwiseSqrt();
  NuclearEval out;
  out.objective = sv.sum() / (2.0 * n);
  if (!with_gradient) return out;
  // U V' = W V S^-1 V' (or U S^-1 U' W) restricted to nonzero singular values.
  const double cut = sv.size() > 0 ? sv(0) * 1e-12 : 0.0;
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > cut) ++rank;
  Matrix polar;
  const Matrix vecs = s.eigenvectors.leftCols(rank);
  const Vector inv = sv.head(rank).cwiseInverse();
  if (s.on_columns)
    polar = (w * vecs) * inv.asDiagonal() * vecs.transpose();
  else
    polar = vecs * inv.asDiagonal() * (vecs.transpose() * w);
  out.subgradient = Vector(d.n_regressors());
  for (Index k = 0; k < d.n_regressors(); ++k)
    out.subgradient(k) = -polar.cwiseProduct(d.x(k)).sum() / (2.0 * n);
  return out;
}

}  // namespace detail

/// (1/2n) times the sum of singular values of P_D(W(beta)).
inline double nuclear_objective(const PanelData& d, const Vector& beta) {
  return detail::nuclear_eval(d, beta, false).objective;
}

/// Convex nuclear-norm estimator of beta by subgradient descent with
/// normalized steps c/sqrt(j), started at the two-way within OLS estimate.
/// Returns the best iterate.
inline NnFit fit_nuclear(const PanelData& d, const NnOptions& opts = {}) {
  if (d.n_regressors() < 1) throw Error(ErrorKind::InvalidArgument, "at least one regressor is required");
  const detail::StartValues start = detail::within_ols(d);
  double step = opts.initial_step;
  if (!(step > 0.0)) step = 10.0 * start.se.norm();
  if (!(step > 0.0)) step = 0.1 * (1.0 + start.beta.norm());

  NnFit out;
  Vector beta = start.beta;
  detail::NuclearEval eval = detail::nuclear_eval(d, beta, true);
  out.beta_star = beta;
  out.nuclear_objective = eval.objective;
  for (int j = 1; j <= opts.max_iter; ++j) {
    const double gnorm = eval.subgradient.norm();
    out.iterations = j;
    if (!(gnorm > 0.0)) {
      out.solver_path.push_back(out.nuclear_objective);
      out.converged = true;
      break;
    }
    beta -= (step / std::sqrt(static_cast<double>(j))) * eval.subgradient / gnorm;
    eval = detail::nuclear_eval(d, beta, true);
    if (eval.objective < out.nuclear_objective) {
      out.nuclear_objective = eval.objective;
      out.beta_star = beta;
    }
    out.solver_path.push_back(out.nuclear_objective);
    if (j >= opts.window) {
      const double earlier = out.solver_path[static_cast<std::size_t>(j - opts.window)];
      if (earlier - out.nuclear_objective <= opts.tol * std::abs(out.nuclear_objective)) {
        out.converged = true;
        break;
      }
    }
  }
  if (!out.converged && opts.throw_on_failure)
    throw NoConvergence<NnFit>("nuclear-norm solver did not converge", out);
  return out;
}

struct PostEstimateOptions {
  int n_iters = 4;
  EmOptions em{};
  MapOptions map{};
};

/// Finite-iteration refinement of the nuclear-norm estimate: factors from the
/// EM-augmented W(beta), breve-residualize y and x, OLS on the residuals.
inline IfeFit post_estimate(const NnFit& nn, const PanelData& d, Index r, const PostEstimateOptions& opts = {}) {
  if (r < 0) throw Error(ErrorKind::InvalidArgument, "r must be nonnegative");
  if (opts.n_iters < 1) throw Error(ErrorKind::InvalidArgument, "n_iters must be at least 1");
  const Index k_count = d.n_regressors();
  Vector beta = nn.beta_star;
  EmOptions em = opts.em;
  em.throw_on_failure = false;
  Matrix imputed;
  std::vector<double> path;
  double last_change = 0.0;
  for (int it = 0; it < opts.n_iters; ++it) {
    EmResult step = em_impute(d.masked(d.residual_matrix(beta)), r, em, imputed.size() ? &imputed : nullptr);
    imputed = step.completed;
    const Matrix y_breve = map_residualize(d.y(), step.factors, ResidualKind::Breve, d, opts.map);
    std::vector<Matrix> x_breve;
    for (Index k = 0; k < k_count; ++k)
      x_breve.push_back(map_residualize(d.x(k), step.factors, ResidualKind::Breve, d, opts.map));
    Matrix xtx(k_count, k_count);
    Vector xty(k_count);
    for (Index a = 0; a < k_count; ++a) {
      xty(a) = x_breve[static_cast<std::size_t>(a)].cwiseProduct(y_breve).sum();
      for (Index b = 0; b <= a; ++b)
        xtx(a, b) = xtx(b, a) = x_breve[static_cast<std::size_t>(a)].cwiseProduct(x_breve[static_cast<std::size_t>(b)]).sum();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(xtx, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().maxCoeff(), lo = es.eigenvalues().minCoeff();
    if (!(hi > 0.0) || lo / hi < detail::kCollinearRcond)
      throw Error(ErrorKind::Collinear, "residualized regressors are collinear");
    const Vector next = xtx.ldlt().solve(xty);
    last_change = (next - beta).norm() / std::max(next.norm(), 1e-300);
    beta = next;
    path.push_back(d.mask().select(d.residual_matrix(beta) - step.factors.common_component(), 0.0).squaredNorm() /
                   static_cast<double>(d.n_obs()));
  }
  IfeFit out = finalize_fit(d, beta, r, em, imputed.size() ? &imputed : nullptr);
  out.outer_iterations = opts.n_iters;
  out.objective_path = std::move(path);
  out.converged = last_change < 1e-6;
  return out;
}

}  // namespace ifepanel
