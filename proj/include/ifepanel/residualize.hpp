#pragma once

#include <cmath>

#include "ifepanel/error.hpp"
#include "ifepanel/factor_pca.hpp"
#include "ifepanel/panel.hpp"

namespace ifepanel {

enum class ResidualKind {
  Breve,  // project out loadings and factors
  Grave,  // loadings only
  Acute,  // factors only
};

struct MapOptions {
  double tol = 1e-10;  // on the l2 norm of the conjugate-gradient residual
  long max_sweeps = 100000;  // symmetric sweeps
};

namespace detail {

constexpr double kDegenerateDenominator = 1e-300;

// v_it -= lambda_ir * <lambda_r, v_t>_{D_t} / <lambda_r, lambda_r>_{D_t} for every t.
inline void sweep_loading(Matrix& v, const Matrix& lambda, const Matrix& denom, const PanelData& d, Index r) {
  for (Index t = 0; t < d.n_periods(); ++t) {
    const double den = denom(t, r);
    if (den == 0.0) continue;
    double num = 0.0;
    for (Index i : d.period_columns(t)) num += lambda(i, r) * v(i, t);
    const double coef = num / den;
    for (Index i : d.period_columns(t)) v(i, t) -= coef * lambda(i, r);
  }
}

// v_it -= f_tr * <f_r, v_i>_{D_i} / <f_r, f_r>_{D_i} for every i.
inline void sweep_factor(Matrix& v, const Matrix& factors, const Matrix& denom, const PanelData& d, Index r) {
  for (Index i = 0; i < d.n_units(); ++i) {
    const double den = denom(i, r);
    if (den == 0.0) continue;
    double num = 0.0;
    for (Index t : d.unit_rows(i)) num += factors(t, r) * v(i, t);
    const double coef = num / den;
    for (Index t : d.unit_rows(i)) v(i, t) -= coef * factors(t, r);
  }
}

inline void check_denominator(double den) {
  if (den > 0.0 && den < kDegenerateDenominator)
    throw Error(ErrorKind::DegenerateProjector, "projection denominator underflows");
}

}  // namespace detail

/// Residuals of v after least-squares projection on the observed cells onto
/// {lambda_i' a_t} (loadings), {f_t' b_i} (factors) or both, computed by the
/// method of alternating projections with one-dimensional updates, accelerated
/// by conjugate gradients.
/// Returns an N x T matrix that is zero outside the observed set.
inline Matrix map_residualize(const Matrix& v, const FactorStructure& fs, ResidualKind kind, const PanelData& d,
                              const MapOptions& opts = {}) {
  if (v.rows() != d.n_units() || v.cols() != d.n_periods())
    throw Error(ErrorKind::ShapeMismatch, "vector shape does not match panel");
  Matrix out = d.mask().select(v, 0.0);
  const Index r_count = fs.rank();
  if (r_count == 0) return out;

  const bool use_loadings = kind != ResidualKind::Acute;
  const bool use_factors = kind != ResidualKind::Grave;

  Matrix lambda_den, factor_den;
  if (use_loadings) {
    lambda_den = Matrix::Zero(d.n_periods(), r_count);
    for (Index r = 0; r < r_count; ++r)
      for (Index t = 0; t < d.n_periods(); ++t) {
        double s = 0.0;
        for (Index i : d.period_columns(t)) s += fs.loadings(i, r) * fs.loadings(i, r);
        detail::check_denominator(s);
        lambda_den(t, r) = s;
      }
  }
  if (use_factors) {
    factor_den = Matrix::Zero(d.n_units(), r_count);
    for (Index r = 0; r < r_count; ++r)
      for (Index i = 0; i < d.n_units(); ++i) {
        double s = 0.0;
        for (Index t : d.unit_rows(i)) s += fs.factors(t, r) * fs.factors(t, r);
        detail::check_denominator(s);
        factor_den(i, r) = s;
      }
  }

  // One forward sweep followed by the same projections in reverse order: a
  // symmetric contraction T whose fixed points are the wanted residuals.
  auto symmetric_sweep = [&](Matrix& x) {
    if (use_loadings)
      for (Index r = 0; r < r_count; ++r) detail::sweep_loading(x, fs.loadings, lambda_den, d, r);
    if (use_factors)
      for (Index r = 0; r < r_count; ++r) detail::sweep_factor(x, fs.factors, factor_den, d, r);
    if (use_factors)
      for (Index r = r_count; r-- > 0;) detail::sweep_factor(x, fs.factors, factor_den, d, r);
    if (use_loadings)
      for (Index r = r_count; r-- > 0;) detail::sweep_loading(x, fs.loadings, lambda_den, d, r);
  };
  auto one_minus_t = [&](const Matrix& x) {
    Matrix tx = x;
    symmetric_sweep(tx);
    return Matrix(x - tx);
  };

  // Conjugate gradients on (I - T) y = (I - T) v; the residual is v - y.
  Matrix y = Matrix::Zero(out.rows(), out.cols());
  Matrix res = one_minus_t(out);
  Matrix dir = res;
  double rs = res.squaredNorm();
  for (long sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    if (std::sqrt(rs) < opts.tol) return out - y;
    const Matrix a_dir = one_minus_t(dir);
    const double curvature = dir.cwiseProduct(a_dir).sum();
    if (!(curvature > 0.0)) return out - y;
    const double alpha = rs / curvature;
    y += alpha * dir;
    res -= alpha * a_dir;
    const double rs_next = res.squaredNorm();
    dir = res + (rs_next / rs) * dir;
    rs = rs_next;
  }
  throw NoConvergence<Matrix>("alternating projections did not converge", Matrix(out - y));
}

}  // namespace ifepanel
