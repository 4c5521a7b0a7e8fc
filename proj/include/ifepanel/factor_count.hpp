#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/factor_pca.hpp"
#include "ifepanel/panel.hpp"
#include "ifepanel/random.hpp"

namespace ifepanel {

struct SelectionInput {
  MaskedMatrix w;  // zero-filled residual matrix
  Index r_max = 8;
  int pa_permutations = 199;
  std::uint64_t pa_seed = 0;
  unsigned threads = 1;
};

struct FactorEstimates {
  Index ic2 = 0;
  Index bic3 = 0;
  Index er = 0;
  Index gr = 0;
  Index ed = 0;
  Index pa = 0;
};

struct SelectionResult {
  FactorEstimates estimates;
  std::vector<double> eigenvalue_spectrum;  // eigenvalues of W'W/(NT), descending
  std::vector<double> pa_thresholds;        // permutation maxima of the leading singular value per tested rank
};

/// Upper bound rule ceil(12 (min(Nbar,Tbar)/100)^(1/4)).
inline Index default_rbar(double n_bar, double t_bar) {
  if (!(n_bar > 0.0 && t_bar > 0.0)) throw Error(ErrorKind::InvalidArgument, "sizes must be positive");
  return static_cast<Index>(std::ceil(12.0 * std::pow(std::min(n_bar, t_bar) / 100.0, 0.25)));
}

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

inline double safe_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num > 0.0 ? kInf : 0.0;
}

template <class Score>
Index argmin_over(Index lo, Index hi, Score score) {
  Index best = lo;
  double best_val = score(lo);
  for (Index k = lo + 1; k <= hi; ++k) {
    const double v = score(k);
    if (v < best_val) {
      best_val = v;
      best = k;
    }
  }
  return best;
}

template <class Score>
Index argmax_over(Index lo, Index hi, Score score) {
  return argmin_over(lo, hi, [&](Index k) { return -score(k); });
}

/// Largest singular value of a dense matrix via its smaller Gram matrix.
inline double top_singular_value(const Matrix& m) {
  const GramSpectrum s = gram_spectrum(m, false);
  return std::sqrt(std::max(0.0, s.eigenvalues(0)));
}

inline Vector singular_values(const Matrix& m) {
  const GramSpectrum s = gram_spectrum(m, false);
  return s.eigenvalues.cwiseMax(0.0).cwiseSqrt();
}

/// Shuffles the entries of every column independently, driven by rng.
inline Matrix permute_columns(const Matrix& m, Rng& rng) {
  Matrix out(m.rows(), m.cols());
  std::vector<Index> order(static_cast<std::size_t>(m.rows()));
  for (Index t = 0; t < m.cols(); ++t) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (Index i = 0; i < m.rows(); ++i) out(i, t) = m(order[static_cast<std::size_t>(i)], t);
  }
  return out;
}

/// Onatski's edge-distribution estimator on descending eigenvalues.
inline Index edge_distribution(const std::vector<double>& ev, Index r_max) {
  const auto m = static_cast<Index>(ev.size());
  Index j = r_max + 1;  // 1-based start of the calibration window
  Index estimate = 0;
  for (int iter = 0; iter < 100; ++iter) {
    Index first = j, last = std::min(j + 4, m);
    if (last - first + 1 < 2) {
      last = m;
      first = std::max<Index>(1, m - 4);
    }
    const Index count = last - first + 1;
    Vector yv(count), xv(count);
    for (Index q = 0; q < count; ++q) {
      const Index idx = first + q;  // 1-based
      yv(q) = ev[static_cast<std::size_t>(idx - 1)];
      xv(q) = std::pow(static_cast<double>(idx - 1), 2.0 / 3.0);
    }
    const double xm = xv.mean(), ym = yv.mean();
    const double sxx = (xv.array() - xm).square().sum();
    const double slope = sxx > 0.0 ? ((xv.array() - xm) * (yv.array() - ym)).sum() / sxx : 0.0;
    const double delta = 2.0 * std::abs(slope);
    Index next = 0;
    for (Index i = 1; i <= r_max; ++i) {
      const double gap = ev[static_cast<std::size_t>(i - 1)] - ev[static_cast<std::size_t>(i)];
      if (gap >= delta && gap > 0.0) next = i;
    }
    estimate = next;
    if (next + 1 == j) break;
    j = next + 1;
  }
  return estimate;
}

}  // namespace detail

/// Elementwise maxima of the descending singular values of column-permuted
/// copies of w.
inline std::vector<double> permuted_spectrum(const MaskedMatrix& w, int n_perm, std::uint64_t seed,
                                             unsigned threads = 1) {
  if (n_perm < 1) throw Error(ErrorKind::InvalidArgument, "n_perm must be at least 1");
  const Index m = std::min(w.rows(), w.cols());
  std::vector<Vector> spectra(static_cast<std::size_t>(n_perm));
  parallel_for(spectra.size(), threads, [&](std::size_t b) {
    Rng rng = make_rng(seed, {0x9A11E7ULL, b});
    spectra[b] = detail::singular_values(detail::permute_columns(w.values, rng));
  });
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (const auto& s : spectra)
    for (Index j = 0; j < m; ++j) out[static_cast<std::size_t>(j)] = std::max(out[static_cast<std::size_t>(j)], s(j));
  return out;
}

/// Descending singular values of a matrix.
inline std::vector<double> singular_value_list(const Matrix& w) {
  const Vector s = detail::singular_values(w);
  return {s.data(), s.data() + s.size()};
}

/// Number-of-factors estimates on the zero-filled residual matrix.
inline SelectionResult select(const SelectionInput& input) {
  const Matrix& w = input.w.values;
  const Index n = w.rows(), t = w.cols();
  const Index m = std::min(n, t);
  const Index r_max = input.r_max;
  if (r_max < 1 || r_max >= m) throw Error(ErrorKind::InvalidArgument, "r_max must satisfy 1 <= r_max < min(N,T)");
  if (input.pa_permutations < 1) throw Error(ErrorKind::InvalidArgument, "pa_permutations must be at least 1");
  if (!w.allFinite()) throw Error(ErrorKind::SpectrumFailure, "matrix has non-finite entries");

  const double nt = static_cast<double>(n) * static_cast<double>(t);
  GramSpectrum spectrum;
  try {
    spectrum = gram_spectrum(w, false);
  } catch (const Error& e) {
    throw Error(ErrorKind::SpectrumFailure, e.what());
  }
  std::vector<double> mu(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) mu[static_cast<std::size_t>(j)] = std::max(0.0, spectrum.eigenvalues(j) / nt);
  // eigenvalues at rounding level of the Gram matrix count as exact zeros
  const double zero_mu = 10.0 * static_cast<double>(std::max(n, t)) * std::numeric_limits<double>::epsilon() * mu[0];
  for (double& x : mu)
    if (x <= zero_mu) x = 0.0;

  // tail[k] = sum_{j > k} mu_j (1-based), i.e. V(k)
  std::vector<double> tail(static_cast<std::size_t>(m + 1), 0.0);
  for (Index k = m - 1; k >= 0; --k)
    tail[static_cast<std::size_t>(k)] = tail[static_cast<std::size_t>(k + 1)] + mu[static_cast<std::size_t>(k)];
  auto v = [&](Index k) { return tail[static_cast<std::size_t>(k)]; };
  // mu_k with the mock eigenvalue at k = 0
  const double mock = v(0) / std::log(static_cast<double>(m));
  auto mu1 = [&](Index k) { return k == 0 ? mock : mu[static_cast<std::size_t>(k - 1)]; };

  SelectionResult res;
  res.eigenvalue_spectrum = mu;
  auto& est = res.estimates;

  const double penalty_ic2 = (static_cast<double>(n + t) / nt) * std::log(static_cast<double>(m));
  est.ic2 = detail::argmin_over(0, r_max, [&](Index k) {
    const double vk = v(k);
    const double lv = vk > 0.0 ? std::log(vk) : -detail::kInf;
    return lv + static_cast<double>(k) * penalty_ic2;
  });

  const double sigma2 = v(r_max);
  est.bic3 = detail::argmin_over(0, r_max, [&](Index k) {
    const double kd = static_cast<double>(k);
    return v(k) + kd * sigma2 * ((static_cast<double>(n + t) - kd) * std::log(nt) / nt);
  });

  est.er = detail::argmax_over(0, r_max, [&](Index k) { return detail::safe_ratio(mu1(k), mu1(k + 1)); });

  auto star = [&](Index k) { return detail::safe_ratio(mu1(k), v(k)); };
  est.gr = detail::argmax_over(0, r_max, [&](Index k) {
    return detail::safe_ratio(std::log1p(star(k)), std::log1p(star(k + 1)));
  });

  est.ed = detail::edge_distribution(mu, r_max);

  // Deflated parallel analysis.
  Eigen::BDCSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  Matrix residual = w;
  Index pa = 0;
  std::vector<double> maxima(static_cast<std::size_t>(input.pa_permutations));
  for (Index k = 0; k < r_max; ++k) {
    if (k > 0) residual.noalias() -= sv(k - 1) * svd.matrixU().col(k - 1) * svd.matrixV().col(k - 1).transpose();
    parallel_for(maxima.size(), input.threads, [&](std::size_t b) {
      Rng rng = make_rng(input.pa_seed, {0x9A11E7ULL, b});
      maxima[b] = detail::top_singular_value(detail::permute_columns(residual, rng));
    });
    const double threshold = *std::max_element(maxima.begin(), maxima.end());
    res.pa_thresholds.push_back(threshold);
    if (sv(k) * sv(k) > zero_mu * nt && sv(k) > threshold)
      pa = k + 1;
    else
      break;
  }
  est.pa = pa;
  return res;
}

}  // namespace ifepanel
