#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/panel.hpp"

namespace ifepanel {

enum class NormalizationSide {
  FactorSide,   // F'F/T = I, Lambda'Lambda diagonal
  LoadingSide,  // Lambda'Lambda/N = I, F'F diagonal
};

/// Loadings (N x R) and factors (T x R). Only the product Lambda F' and the
/// column spaces are identified.
struct FactorStructure {
  Matrix loadings;
  Matrix factors;
  NormalizationSide side = NormalizationSide::FactorSide;

  Index rank() const { return loadings.cols(); }
  Matrix common_component() const {
    if (rank() == 0) return Matrix::Zero(loadings.rows(), factors.rows());
    return loadings * factors.transpose();
  }
};

/// Eigen decomposition of the smaller Gram matrix of w, eigenvalues descending.
struct GramSpectrum {
  Vector eigenvalues;   // descending, length min(N, T)
  Matrix eigenvectors;  // matching columns
  bool on_columns = true;  // true: W'W (T x T), false: WW' (N x N)
};

namespace detail {

inline Matrix gram(const Matrix& w, bool on_columns) {
  const Index dim = on_columns ? w.cols() : w.rows();
  Matrix g = Matrix::Zero(dim, dim);
  if (on_columns)
    g.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose());
  else
    g.selfadjointView<Eigen::Lower>().rankUpdate(w);
  return g.selfadjointView<Eigen::Lower>();
}

inline void fix_signs(Matrix& v) {
  for (Index c = 0; c < v.cols(); ++c) {
    Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0) v.col(c) *= -1.0;
  }
}

}  // namespace detail

inline GramSpectrum gram_spectrum(const Matrix& w, bool with_vectors = true) {
  GramSpectrum out;
  out.on_columns = w.cols() <= w.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(
      detail::gram(w, out.on_columns), with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::EigenFailure, "eigensolver did not converge");
  out.eigenvalues = solver.eigenvalues().reverse();
  if (with_vectors) out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

/// Sum of the eigenvalues of W'W beyond the first r, i.e. the SSR of the best
/// rank-r approximation of w.
inline double tail_eigen_sum(const GramSpectrum& s, Index r) {
  double sum = 0.0;
  for (Index j = r; j < s.eigenvalues.size(); ++j) sum += s.eigenvalues(j);
  return sum;
}

/// SSR of the best rank-r approximation of w. Gram eigenvalues carry an
/// absolute error of order eps * mu_1, so a tail below 1e-4 of the total is
/// recomputed from singular values, which resolve it to full relative accuracy.
inline double tail_sum_of(const Matrix& w, Index r) {
  const GramSpectrum s = gram_spectrum(w, false);
  const double tail = tail_eigen_sum(s, r);
  if (tail > 1e-4 * s.eigenvalues.sum()) return tail;
  const Vector sv = Eigen::BDCSVD<Matrix>(w).singularValues();
  double sum = 0.0;
  for (Index j = r; j < sv.size(); ++j) sum += sv(j) * sv(j);
  return sum;
}

/// Principal-components factors of a complete matrix. When T <= N the factors
/// are sqrt(T) times the leading eigenvectors of W'W and Lambda = W F / T;
/// otherwise the roles are swapped (Lambda'Lambda/N = I). Each eigenvector is
/// signed so that its largest-magnitude entry is positive.
inline FactorStructure pca_factors(const Matrix& w, Index r, const GramSpectrum* spectrum = nullptr) {
  const Index n = w.rows(), t = w.cols();
  if (r < 0 || r > std::min(n, t))
    throw Error(ErrorKind::RankTooLarge, "rank " + std::to_string(r) + " exceeds min(N,T)");
  FactorStructure fs;
  fs.side = t <= n ? NormalizationSide::FactorSide : NormalizationSide::LoadingSide;
  if (r == 0) {
    fs.loadings = Matrix::Zero(n, 0);
    fs.factors = Matrix::Zero(t, 0);
    return fs;
  }
  GramSpectrum local;
  if (spectrum == nullptr) {
    local = gram_spectrum(w);
    spectrum = &local;
  }
  Matrix v = spectrum->eigenvectors.leftCols(r);
  detail::fix_signs(v);
  if (fs.side == NormalizationSide::FactorSide) {
    fs.factors = std::sqrt(static_cast<double>(t)) * v;
    fs.loadings = w * fs.factors / static_cast<double>(t);
  } else {
    fs.loadings = std::sqrt(static_cast<double>(n)) * v;
    fs.factors = w.transpose() * fs.loadings / static_cast<double>(n);
  }
  return fs;
}

struct EmOptions {
  double tol = 1e-8;
  int max_iter = 1000;
  bool throw_on_failure = true;
};

struct EmReport {
  int iterations = 0;
  double final_delta = 0.0;
  std::vector<double> objective_path;  // observed-cell SSR after each step
  bool converged = false;
};

struct EmResult {
  FactorStructure factors;
  Matrix completed;
  EmReport report;
};

/// Observed-cell sum of squares of (w - fit).
inline double observed_ssr(const MaskedMatrix& w, const Matrix& fit) {
  return w.mask.select(w.values - fit, 0.0).squaredNorm();
}

/// EM data augmentation for an incomplete matrix: fill missing cells with the
/// current low-rank fit, re-extract factors from the completed matrix, refill.
/// Starts from W_perp = 0 unless `start` supplies an initial imputation.
/// Stops when ||change of imputed block||_F < tol * (1 + ||imputed block||_F).
inline EmResult em_impute(const MaskedMatrix& w, Index r, const EmOptions& opts = {}, const Matrix* start = nullptr) {
  const Index n = w.rows(), t = w.cols();
  if (r < 0 || r > std::min(n, t))
    throw Error(ErrorKind::RankTooLarge, "rank " + std::to_string(r) + " exceeds min(N,T)");
  const bool complete = w.mask.all();
  Matrix perp = (start != nullptr && !complete) ? projection_d_perp(*start, w.mask) : Matrix::Zero(n, t);

  EmResult out;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    const Matrix filled = complete ? w.values : Matrix(w.values + perp);
    out.factors = pca_factors(filled, r);
    const Matrix fit = out.factors.common_component();
    out.report.objective_path.push_back(observed_ssr(w, fit));
    out.report.iterations = iter;
    if (complete) {
      out.completed = filled;
      out.report.final_delta = 0.0;
      out.report.converged = true;
      return out;
    }
    Matrix next = projection_d_perp(fit, w.mask);
    out.report.final_delta = (next - perp).norm();
    const double imputed_norm = next.norm();
    perp = std::move(next);
    if (out.report.final_delta < opts.tol * (1.0 + imputed_norm)) {
      out.report.converged = true;
      break;
    }
  }
  out.completed = w.values + perp;
  if (!out.report.converged && opts.throw_on_failure)
    throw NoConvergence<EmResult>("EM imputation did not converge in " + std::to_string(opts.max_iter) + " iterations",
                                  out);
  return out;
}

}  // namespace ifepanel
