#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <span>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/factor_pca.hpp"
#include "ifepanel/ife_estimator.hpp"
#include "ifepanel/panel.hpp"
#include "ifepanel/residualize.hpp"

namespace ifepanel {

/// Truncation lags for the weak-exogeneity (l) and serial-correlation (m) kernels.
struct BiasBandwidths {
  int l = 5;
  int m = 3;
};

/// Newey-West rule of thumb round(4 (T/100)^(2/9)).
inline int default_bandwidth_m(double t_bar) {
  return static_cast<int>(std::lround(4.0 * std::pow(t_bar / 100.0, 2.0 / 9.0)));
}

enum class VcovKind { Homoskedastic, HeteroskedasticRobust, ClusteredByUnit };

inline const char* to_string(VcovKind kind) {
  switch (kind) {
    case VcovKind::Homoskedastic: return "homoskedastic";
    case VcovKind::HeteroskedasticRobust: return "heteroskedastic";
    case VcovKind::ClusteredByUnit: return "clustered";
  }
  return "unknown";
}

/// Which bias terms enter beta_tilde.
struct BiasSelection {
  bool b = true;
  bool c1 = true;
  bool c2 = true;
};

struct InferenceOptions {
  BiasBandwidths bandwidths{};
  BiasSelection corrections{};
  VcovKind vcov = VcovKind::ClusteredByUnit;
  bool dof_adjust = true;
  MapOptions map{};
};

struct BiasTerms {
  Vector b;   // D^-1 B^beta
  Vector c1;  // D^-1 C1^beta
  Vector c2;  // D^-1 C2^beta
};

struct InferenceReport {
  Vector beta_hat;
  Vector b_hat, c1_hat, c2_hat;
  Vector beta_tilde;
  Matrix d_matrix;
  VcovKind vcov_kind = VcovKind::ClusteredByUnit;
  Matrix vcov;
  Vector std_errors;
  Vector z_stats;  // against zero
  bool dof_adjusted = false;
  BiasSelection applied{};
  BiasBandwidths bandwidths{};
};

/// Theta = Lambda (Lambda'Lambda)^-1 (F'F)^-1 F'  (N x T).
inline Matrix theta_matrix(const FactorStructure& fs) {
  const Index n = fs.loadings.rows(), t = fs.factors.rows();
  if (fs.rank() == 0) return Matrix::Zero(n, t);
  const Matrix ll = fs.loadings.transpose() * fs.loadings;
  const Matrix ff = fs.factors.transpose() * fs.factors;
  const Matrix ll_inv = ll.completeOrthogonalDecomposition().pseudoInverse();
  const Matrix ff_inv = ff.completeOrthogonalDecomposition().pseudoInverse();
  return fs.loadings * ll_inv * ff_inv * fs.factors.transpose();
}

/// P_F = F (F'F)^+ F'  (T x T).
inline Matrix factor_projection(const FactorStructure& fs) {
  const Index t = fs.factors.rows();
  if (fs.rank() == 0) return Matrix::Zero(t, t);
  const Matrix ff = fs.factors.transpose() * fs.factors;
  return fs.factors * ff.completeOrthogonalDecomposition().pseudoInverse() * fs.factors.transpose();
}

namespace detail {

inline void check_d_matrix(const Matrix& dm) {
  if (dm.size() == 0) throw Error(ErrorKind::Collinear, "empty regressor set");
  Eigen::SelfAdjointEigenSolver<Matrix> es(dm, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().maxCoeff(), lo = es.eigenvalues().minCoeff();
  if (!(hi > 0.0) || lo / hi < kCollinearRcond)
    throw Error(ErrorKind::Collinear, "residualized regressors are collinear");
}

inline Matrix gram_of(const std::vector<Matrix>& cols) {
  const auto k = static_cast<Index>(cols.size());
  Matrix g(k, k);
  for (Index a = 0; a < k; ++a)
    for (Index b = 0; b <= a; ++b)
      g(a, b) = g(b, a) = cols[static_cast<std::size_t>(a)].cwiseProduct(cols[static_cast<std::size_t>(b)]).sum();
  return g;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

/// Breve residuals of every regressor (loadings and factors projected out on D).
inline std::vector<Matrix> breve_regressors(const IfeFit& fit, const PanelData& d, const MapOptions& map = {}) {
  std::vector<Matrix> out;
  for (Index k = 0; k < d.n_regressors(); ++k)
    out.push_back(map_residualize(d.x(k), fit.factor, ResidualKind::Breve, d, map));
  return out;
}

/// D = sum over D of x_breve x_breve'.
inline Matrix d_matrix(const IfeFit& fit, const PanelData& d, const MapOptions& map = {}) {
  Matrix dm = detail::gram_of(breve_regressors(fit, d, map));
  detail::check_d_matrix(dm);
  return dm;
}

namespace detail {

inline Vector bias_b_raw(const IfeFit& fit, const PanelData& d, const Matrix& theta, const MapOptions& map) {
  const Index k_count = d.n_regressors();
  Vector out = Vector::Zero(k_count);
  const Vector unit_e2 = fit.residuals.cwiseAbs2().rowwise().sum();
  for (Index k = 0; k < k_count; ++k) {
    const Matrix grave = map_residualize(d.x(k), fit.factor, ResidualKind::Grave, d, map);
    // [P_D(X_grave) Theta']_ii = sum_t x_grave_it Theta_it
    const Vector diag = grave.cwiseProduct(theta).rowwise().sum();
    out(k) = unit_e2.dot(diag);
  }
  return out;
}

inline Vector bias_c1_raw(const IfeFit& fit, const PanelData& d, int l_max) {
  const Index k_count = d.n_regressors();
  Vector out = Vector::Zero(k_count);
  if (l_max <= 0) return out;
  const Matrix pf = factor_projection(fit.factor);
  for (Index k = 0; k < k_count; ++k) {
    const Matrix& x = d.x(k);
    double acc = 0.0;
    for (Index i = 0; i < d.n_units(); ++i)
      for (int l = 1; l <= l_max; ++l)
        for (Index t : d.unit_rows(i)) {
          if (t - l < 0 || !d.observed(i, t - l)) continue;
          acc += pf(t, t - l) * fit.residuals(i, t - l) * x(i, t);
        }
    out(k) = acc;
  }
  return out;
}

inline Vector bias_c2_raw(const IfeFit& fit, const PanelData& d, const Matrix& theta, int m_max,
                          const MapOptions& map) {
  const Index k_count = d.n_regressors();
  Vector out = Vector::Zero(k_count);
  const Vector period_e2 = fit.residuals.cwiseAbs2().colwise().sum().transpose();
  for (Index k = 0; k < k_count; ++k) {
    const Matrix acute = map_residualize(d.x(k), fit.factor, ResidualKind::Acute, d, map);
    // A = P_D(X_acute)' Theta, T x T
    const Matrix a = acute.transpose() * theta;
    double acc = period_e2.dot(a.diagonal());
    for (Index i = 0; i < d.n_units(); ++i)
      for (int m = 1; m <= m_max; ++m)
        for (Index t : d.unit_rows(i)) {
          if (t - m < 0 || !d.observed(i, t - m)) continue;
          acc += fit.residuals(i, t) * fit.residuals(i, t - m) * (a(t, t - m) + a(t - m, t));
        }
    out(k) = acc;
  }
  return out;
}

inline BiasTerms bias_terms_with(const IfeFit& fit, const PanelData& d, const BiasBandwidths& bw,
                                 const MapOptions& map, const Matrix& dm) {
  if (bw.l < 0 || bw.m < 0) throw Error(ErrorKind::InvalidArgument, "bandwidths must be nonnegative");
  const Index k_count = d.n_regressors();
  BiasTerms out{Vector::Zero(k_count), Vector::Zero(k_count), Vector::Zero(k_count)};
  if (fit.factor.rank() == 0) return out;
  const Matrix theta = theta_matrix(fit.factor);
  const auto solver = dm.ldlt();
  out.b = solver.solve(bias_b_raw(fit, d, theta, map));
  out.c1 = solver.solve(bias_c1_raw(fit, d, bw.l));
  out.c2 = solver.solve(bias_c2_raw(fit, d, theta, bw.m, map));
  return out;
}

}  // namespace detail

/// Bias estimates B, C1, C2 premultiplied by D^-1. All zero when R = 0.
inline BiasTerms bias_terms(const IfeFit& fit, const PanelData& d, const BiasBandwidths& bw,
                            const MapOptions& map = {}) {
  return detail::bias_terms_with(fit, d, bw, map, d_matrix(fit, d, map));
}

namespace detail {

inline Matrix covariance_from(const IfeFit& fit, const PanelData& d, const std::vector<Matrix>& xb, const Matrix& dm,
                              VcovKind kind, bool dof_adjust) {
  const Index k_count = d.n_regressors();
  const double n = static_cast<double>(d.n_obs());
  const double big_n = static_cast<double>(d.n_units());
  const double kk = static_cast<double>(k_count);
  const Matrix d_inv = dm.ldlt().solve(Matrix::Identity(k_count, k_count));
  Matrix v;
  switch (kind) {
    case VcovKind::Homoskedastic: {
      v = fit.sigma2 * d_inv;
      if (dof_adjust) v *= n / (n - kk);
      break;
    }
    case VcovKind::HeteroskedasticRobust: {
      const Matrix e2 = fit.residuals.cwiseAbs2();
      Matrix omega(k_count, k_count);
      for (Index a = 0; a < k_count; ++a)
        for (Index b = 0; b <= a; ++b)
          omega(a, b) = omega(b, a) =
              (e2.cwiseProduct(xb[static_cast<std::size_t>(a)]).cwiseProduct(xb[static_cast<std::size_t>(b)])).sum();
      if (dof_adjust) omega *= n / (n - kk);
      v = d_inv * omega * d_inv;
      break;
    }
    case VcovKind::ClusteredByUnit: {
      Matrix scores(d.n_units(), k_count);
      for (Index a = 0; a < k_count; ++a)
        scores.col(a) = fit.residuals.cwiseProduct(xb[static_cast<std::size_t>(a)]).rowwise().sum();
      Matrix omega = scores.transpose() * scores;
      if (dof_adjust) omega *= (big_n / (big_n - 1.0)) * ((n - 1.0) / (n - kk));
      v = d_inv * omega * d_inv;
      break;
    }
  }
  return symmetrize(v);
}

}  // namespace detail

/// Covariance estimator for beta: sigma^2 D^-1, or the sandwich D^-1 Omega D^-1
/// with a White-type or unit-clustered Omega.
inline Matrix covariance(const IfeFit& fit, const PanelData& d, VcovKind kind, bool dof_adjust,
                         const MapOptions& map = {}) {
  const std::vector<Matrix> xb = breve_regressors(fit, d, map);
  const Matrix dm = detail::gram_of(xb);
  detail::check_d_matrix(dm);
  return detail::covariance_from(fit, d, xb, dm, kind, dof_adjust);
}

/// Full inference pass: bias terms, bias-corrected beta, covariance, z-statistics.
inline InferenceReport infer(const IfeFit& fit, const PanelData& d, const InferenceOptions& opts = {}) {
  InferenceReport rep;
  const std::vector<Matrix> xb = breve_regressors(fit, d, opts.map);
  rep.d_matrix = detail::gram_of(xb);
  detail::check_d_matrix(rep.d_matrix);
  const BiasTerms bias = detail::bias_terms_with(fit, d, opts.bandwidths, opts.map, rep.d_matrix);
  rep.beta_hat = fit.beta;
  rep.b_hat = bias.b;
  rep.c1_hat = bias.c1;
  rep.c2_hat = bias.c2;
  rep.beta_tilde = fit.beta;
  if (opts.corrections.b) rep.beta_tilde += bias.b;
  if (opts.corrections.c1) rep.beta_tilde += bias.c1;
  if (opts.corrections.c2) rep.beta_tilde += bias.c2;
  rep.vcov_kind = opts.vcov;
  rep.vcov = detail::covariance_from(fit, d, xb, rep.d_matrix, opts.vcov, opts.dof_adjust);
  rep.std_errors = rep.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  rep.z_stats = rep.beta_tilde.cwiseQuotient(rep.std_errors);
  rep.dof_adjusted = opts.dof_adjust;
  rep.applied = opts.corrections;
  rep.bandwidths = opts.bandwidths;
  return rep;
}

struct ZTest {
  double statistic = 0.0;
  bool reject = false;
};

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<>(), p); }

/// Two-sided z-tests of beta_tilde_k = null_k at the given level.
inline std::vector<ZTest> z_test(const InferenceReport& rep, const Vector& null_values, double level = 0.05) {
  if (null_values.size() != rep.beta_tilde.size()) throw Error(ErrorKind::ShapeMismatch, "null vector length");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "level must be in (0,1)");
  const double crit = normal_quantile(1.0 - level / 2.0);
  std::vector<ZTest> out;
  for (Index k = 0; k < rep.beta_tilde.size(); ++k) {
    const double se = rep.std_errors(k);
    if (!(se > 0.0)) throw Error(ErrorKind::ZeroStdErr, "standard error is zero");
    const double z = (rep.beta_tilde(k) - null_values(k)) / se;
    out.push_back({z, std::abs(z) > crit});
  }
  return out;
}

struct LongRunEffect {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// phi = beta / (1 - sum gamma_j) on the given coefficients, with a
/// delta-method standard error from vcov.
inline LongRunEffect long_run_effect(Index beta_index, std::span<const Index> gamma_indices, const Vector& coef,
                                     const Matrix& vcov) {
  const Index k = coef.size();
  auto check = [k](Index j) {
    if (j < 0 || j >= k) throw Error(ErrorKind::InvalidArgument, "coefficient index out of range");
  };
  check(beta_index);
  double g = 0.0;
  for (Index j : gamma_indices) {
    check(j);
    g += coef(j);
  }
  const double denom = 1.0 - g;
  if (std::abs(denom) < 1e-10) throw Error(ErrorKind::UnitRoot, "persistence is within 1e-10 of one");
  const double b = coef(beta_index);
  Vector grad = Vector::Zero(k);
  grad(beta_index) += 1.0 / denom;
  for (Index j : gamma_indices) grad(j) += b / (denom * denom);
  LongRunEffect out;
  out.estimate = b / denom;
  out.std_error = std::sqrt(std::max(0.0, grad.dot(vcov * grad)));
  return out;
}

/// Long-run effect evaluated at the report's bias-corrected coefficients.
inline LongRunEffect long_run_effect(Index beta_index, std::span<const Index> gamma_indices,
                                     const InferenceReport& rep) {
  return long_run_effect(beta_index, gamma_indices, rep.beta_tilde, rep.vcov);
}

}  // namespace ifepanel
