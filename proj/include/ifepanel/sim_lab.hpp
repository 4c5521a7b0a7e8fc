#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ifepanel/error.hpp"
#include "ifepanel/factor_count.hpp"
#include "ifepanel/ife_estimator.hpp"
#include "ifepanel/inference.hpp"
#include "ifepanel/panel.hpp"
#include "ifepanel/random.hpp"

namespace ifepanel::sim {

enum class MissingPattern { P1, P2, P3 };

enum class ErrorConfig {
  Homoskedastic,   // i
  FatTails,        // ii
  CrossHet,        // iii
  CrossHetSerial,  // iv
};

inline const char* to_string(MissingPattern p) {
  switch (p) {
    case MissingPattern::P1: return "1";
    case MissingPattern::P2: return "2";
    case MissingPattern::P3: return "3";
  }
  return "?";
}

inline const char* to_string(ErrorConfig c) {
  switch (c) {
    case ErrorConfig::Homoskedastic: return "i";
    case ErrorConfig::FatTails: return "ii";
    case ErrorConfig::CrossHet: return "iii";
    case ErrorConfig::CrossHetSerial: return "iv";
  }
  return "?";
}

inline MissingPattern parse_pattern(const std::string& s) {
  if (s == "1" || s == "P1" || s == "p1") return MissingPattern::P1;
  if (s == "2" || s == "P2" || s == "p2") return MissingPattern::P2;
  if (s == "3" || s == "P3" || s == "p3") return MissingPattern::P3;
  throw Error(ErrorKind::InvalidArgument, "unknown missing pattern '" + s + "'");
}

inline ErrorConfig parse_error_config(const std::string& s) {
  if (s == "i" || s == "1") return ErrorConfig::Homoskedastic;
  if (s == "ii" || s == "2") return ErrorConfig::FatTails;
  if (s == "iii" || s == "3") return ErrorConfig::CrossHet;
  if (s == "iv" || s == "4") return ErrorConfig::CrossHetSerial;
  throw Error(ErrorKind::InvalidArgument, "unknown error configuration '" + s + "'");
}

struct DgpConfig {
  double n_bar = 120;
  double t_bar = 24;
  double psi = 0.0;
  MissingPattern pattern = MissingPattern::P1;
  ErrorConfig error_config = ErrorConfig::Homoskedastic;
  double beta_true = 1.0;
  std::uint64_t seed = 0;

  Index frame_units() const { return static_cast<Index>(std::lround(n_bar / (1.0 - psi))); }
  Index frame_periods() const { return static_cast<Index>(std::lround(t_bar / (1.0 - psi))); }
};

constexpr Index kTrueRank = 2;
constexpr int kBurnIn = 1000;

struct GroundTruth {
  double beta = 1.0;
  Matrix loadings;  // N x 2
  Matrix factors;   // T x 2
  Matrix errors;    // N x T, full frame
  std::vector<ObsIndex> dropped;
};

struct Draw {
  PanelData data;
  GroundTruth truth;
};

inline void validate(const DgpConfig& c) {
  if (!(c.psi >= 0.0 && c.psi < 1.0)) throw Error(ErrorKind::InvalidArgument, "psi must lie in [0, 1)");
  if (!(c.n_bar >= 1.0 && c.t_bar >= 1.0)) throw Error(ErrorKind::InvalidArgument, "average sizes must be >= 1");
}

/// Idiosyncratic errors on an N x T frame. All configurations have variance 4.
inline Matrix draw_errors(ErrorConfig config, Index n, Index t, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix e(n, t);
  // units are numbered from one, so index 0 is odd
  auto odd = [](Index i) { return i % 2 == 0; };
  switch (config) {
    case ErrorConfig::Homoskedastic:
      for (Index i = 0; i < n; ++i)
        for (Index s = 0; s < t; ++s) e(i, s) = 2.0 * normal(rng);
      break;
    case ErrorConfig::FatTails: {
      std::student_t_distribution<double> student(5.0);
      const double scale = std::sqrt(12.0 / 5.0);
      for (Index i = 0; i < n; ++i)
        for (Index s = 0; s < t; ++s) e(i, s) = scale * student(rng);
      break;
    }
    case ErrorConfig::CrossHet:
      for (Index i = 0; i < n; ++i) {
        const double sd = std::sqrt(odd(i) ? 2.0 : 6.0);
        for (Index s = 0; s < t; ++s) e(i, s) = sd * normal(rng);
      }
      break;
    case ErrorConfig::CrossHetSerial:
      for (Index i = 0; i < n; ++i) {
        const double sd = std::sqrt(odd(i) ? 1.5 : 4.5);
        double prev = 0.0;
        for (int s = 0; s < kBurnIn; ++s) prev = 0.5 * prev + sd * normal(rng);
        for (Index s = 0; s < t; ++s) {
          prev = 0.5 * prev + sd * normal(rng);
          e(i, s) = prev;
        }
      }
      break;
  }
  return e;
}

/// Cells to delete from an N x T frame so that a fraction psi is missing.
inline std::vector<ObsIndex> apply_pattern(MissingPattern pattern, double psi, Index n, Index t, Rng& rng) {
  if (!(psi >= 0.0 && psi < 1.0)) throw Error(ErrorKind::InvalidArgument, "psi must lie in [0, 1)");
  std::vector<ObsIndex> drop;
  if (psi == 0.0) return drop;
  if (pattern == MissingPattern::P1) {
    const auto cells = static_cast<std::size_t>(n * t);
    const auto count = static_cast<std::size_t>(std::llround(static_cast<double>(cells) * psi));
    std::vector<std::size_t> order(cells);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      // partial Fisher-Yates: the first `count` entries are a uniform sample
      for (std::size_t j = 0; j < count; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, cells - 1);
        std::swap(order[j], order[pick(rng)]);
      }
      std::vector<Index> row_left(static_cast<std::size_t>(n), t), col_left(static_cast<std::size_t>(t), n);
      for (std::size_t j = 0; j < count; ++j) {
        --row_left[order[j] / static_cast<std::size_t>(t)];
        --col_left[order[j] % static_cast<std::size_t>(t)];
      }
      const bool ok = std::all_of(row_left.begin(), row_left.end(), [](Index v) { return v > 0; }) &&
                      std::all_of(col_left.begin(), col_left.end(), [](Index v) { return v > 0; });
      if (!ok) continue;
      drop.reserve(count);
      for (std::size_t j = 0; j < count; ++j)
        drop.push_back({static_cast<Index>(order[j] / static_cast<std::size_t>(t)),
                        static_cast<Index>(order[j] % static_cast<std::size_t>(t))});
      std::sort(drop.begin(), drop.end());
      return drop;
    }
    throw Error(ErrorKind::PatternInfeasible, "could not draw a pattern-1 mask that keeps every row and column");
  }

  const auto n1 = static_cast<Index>(std::llround(2.0 * psi * static_cast<double>(n)));
  if (n1 > n) throw Error(ErrorKind::PatternInfeasible, "2 psi N exceeds N");
  const Index t1 = t / 2;
  std::vector<Index> units(static_cast<std::size_t>(n));
  std::iota(units.begin(), units.end(), Index{0});
  std::shuffle(units.begin(), units.end(), rng);
  units.resize(static_cast<std::size_t>(n1));
  std::sort(units.begin(), units.end());
  for (Index i : units) {
    Index start = 0;
    if (pattern == MissingPattern::P3) {
      std::uniform_int_distribution<Index> pick(0, t - t1);
      start = pick(rng);
    }
    for (Index s = 0; s < t; ++s)
      if (s < start || s >= start + t1) drop.push_back({i, s});
  }
  std::sort(drop.begin(), drop.end());
  return drop;
}

/// One draw of the simulation design. Pattern draws use their own stream, so
/// balanced draws do not depend on the pattern.
inline Draw generate(const DgpConfig& config, std::uint64_t rep_seed) {
  validate(config);
  const Index n = config.frame_units(), t = config.frame_periods();
  Rng rng = make_rng(rep_seed, {1});
  std::normal_distribution<double> normal(0.0, 1.0);

  Draw out;
  GroundTruth& g = out.truth;
  g.beta = config.beta_true;
  Matrix f(t + 1, kTrueRank);  // row 0 is the pre-sample period
  for (Index s = 0; s <= t; ++s)
    for (Index r = 0; r < kTrueRank; ++r) f(s, r) = normal(rng);
  g.loadings.resize(n, kTrueRank);
  Matrix chi(n, kTrueRank);
  for (Index i = 0; i < n; ++i)
    for (Index r = 0; r < kTrueRank; ++r) {
      g.loadings(i, r) = 1.0 + normal(rng);
      chi(i, r) = 1.0 + normal(rng);
    }
  Matrix w(n, t);
  for (Index i = 0; i < n; ++i)
    for (Index s = 0; s < t; ++s) w(i, s) = normal(rng);
  g.errors = draw_errors(config.error_config, n, t, rng);
  g.factors = f.bottomRows(t);

  const Matrix lagged_sum = f.bottomRows(t) + f.topRows(t);
  Matrix x = (Matrix::Ones(n, t) + (g.loadings + chi) * lagged_sum.transpose() + w).eval();
  Matrix y = g.beta * x + g.loadings * g.factors.transpose() + g.errors;

  Rng pattern_rng = make_rng(rep_seed, {2});
  g.dropped = apply_pattern(config.pattern, config.psi, n, t, pattern_rng);
  Mask mask = Mask::Constant(n, t, true);
  for (const auto& c : g.dropped) mask(c.unit, c.period) = false;
  out.data = PanelData(std::move(mask), std::move(y), {std::move(x)});
  return out;
}

struct StudyOptions {
  int n_reps = 100;
  unsigned threads = 1;
  IfeOptions estimation{};  // r is overridden
  std::optional<int> bandwidth_m;  // default: rule of thumb on t_bar
  bool dof_adjust = false;
  bool select_factors = false;
  std::optional<Index> r_bar;  // default: default_rbar(n_bar, t_bar)
  int pa_permutations = 199;
  int first_stage_max_outer = 2000;
  double max_failure_rate = 0.01;
};

struct SimMetrics {
  double rel_bias_pct = 0.0;
  double se_sd_ratio = 0.0;
  double size_at_5pct = 0.0;
  std::optional<std::array<double, 6>> mean_r_hat;  // ic2, bic3, er, gr, ed, pa
  int n_reps = 0;
  int n_failed = 0;
};

struct RepOutcome {
  bool ok = false;
  double beta_tilde = 0.0;
  double se = 0.0;
  bool reject = false;
  std::array<double, 6> r_hat{};
  std::string failure;
};

/// Corrections and covariance used for each error configuration.
inline InferenceOptions inference_for(ErrorConfig config, int m, bool dof_adjust) {
  InferenceOptions o;
  o.bandwidths.m = m;
  o.dof_adjust = dof_adjust;
  o.corrections = {false, false, false};
  switch (config) {
    case ErrorConfig::Homoskedastic:
    case ErrorConfig::FatTails:
      o.vcov = VcovKind::Homoskedastic;
      break;
    case ErrorConfig::CrossHet:
      o.corrections.b = true;
      o.vcov = VcovKind::HeteroskedasticRobust;
      break;
    case ErrorConfig::CrossHetSerial:
      o.corrections.b = true;
      o.corrections.c2 = true;
      o.vcov = VcovKind::ClusteredByUnit;
      break;
  }
  return o;
}

inline RepOutcome run_replication(const DgpConfig& config, const StudyOptions& opts, int rep) {
  RepOutcome out;
  const std::uint64_t rep_seed = derive_seed(config.seed, {static_cast<std::uint64_t>(rep)});
  try {
    const Draw draw = generate(config, rep_seed);
    const PanelData& d = draw.data;
    IfeOptions est = opts.estimation;
    est.r = kTrueRank;
    est.rng_seed = derive_seed(rep_seed, {4});
    const IfeFit fit_r0 = fit(d, est);
    const int m = opts.bandwidth_m.value_or(default_bandwidth_m(config.t_bar));
    const InferenceReport rep_inf = infer(fit_r0, d, inference_for(config.error_config, m, opts.dof_adjust));
    out.beta_tilde = rep_inf.beta_tilde(0);
    out.se = rep_inf.std_errors(0);
    out.reject = z_test(rep_inf, Vector::Constant(1, config.beta_true)).front().reject;

    if (opts.select_factors) {
      IfeOptions big = est;
      big.r = opts.r_bar.value_or(default_rbar(config.n_bar, config.t_bar));
      // first stage only feeds the residual matrix; an unconverged iterate is usable
      big.throw_on_failure = false;
      big.max_outer = opts.first_stage_max_outer;
      const IfeFit fit_big = fit(d, big);
      SelectionInput in;
      in.w = d.masked(d.residual_matrix(fit_big.beta));
      in.r_max = big.r;
      in.pa_permutations = opts.pa_permutations;
      in.pa_seed = derive_seed(rep_seed, {3});
      const FactorEstimates e = select(in).estimates;
      out.r_hat = {static_cast<double>(e.ic2), static_cast<double>(e.bic3), static_cast<double>(e.er),
                   static_cast<double>(e.gr),  static_cast<double>(e.ed),   static_cast<double>(e.pa)};
    }
    out.ok = std::isfinite(out.beta_tilde) && std::isfinite(out.se);
    if (!out.ok) out.failure = "non-finite estimate";
  } catch (const Error& e) {
    out.ok = false;
    out.failure = e.what();
  }
  return out;
}

namespace detail {

/// Neumaier-compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

inline SimMetrics aggregate(const std::vector<RepOutcome>& reps, double beta_true, bool with_r_hat) {
  SimMetrics m;
  m.n_reps = static_cast<int>(reps.size());
  detail::CompensatedSum sum_beta, sum_se, sum_reject;
  std::array<detail::CompensatedSum, 6> sum_r;
  int ok = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++m.n_failed;
      continue;
    }
    ++ok;
    sum_beta.add(r.beta_tilde);
    sum_se.add(r.se);
    sum_reject.add(r.reject ? 1.0 : 0.0);
    for (std::size_t j = 0; j < 6; ++j) sum_r[j].add(r.r_hat[j]);
  }
  if (ok == 0) return m;
  const double count = static_cast<double>(ok);
  const double mean_beta = sum_beta.value() / count;
  detail::CompensatedSum ss;
  for (const auto& r : reps)
    if (r.ok) ss.add((r.beta_tilde - mean_beta) * (r.beta_tilde - mean_beta));
  const double sd = ok > 1 ? std::sqrt(ss.value() / (count - 1.0)) : 0.0;
  m.rel_bias_pct = 100.0 * (mean_beta - beta_true) / beta_true;
  m.se_sd_ratio = sd > 0.0 ? (sum_se.value() / count) / sd : 0.0;
  m.size_at_5pct = sum_reject.value() / count;
  if (with_r_hat) {
    std::array<double, 6> mean{};
    for (std::size_t j = 0; j < 6; ++j) mean[j] = sum_r[j].value() / count;
    m.mean_r_hat = mean;
  }
  return m;
}

struct StudyResult {
  SimMetrics metrics;
  std::vector<RepOutcome> replications;
};

/// Monte Carlo study over n_reps independent draws. Replication seeds are
/// derived from config.seed and the replication index, so the result does not
/// depend on the number of worker threads.
inline StudyResult run_study(const DgpConfig& config, const StudyOptions& opts) {
  validate(config);
  if (opts.n_reps < 1) throw Error(ErrorKind::InvalidArgument, "n_reps must be at least 1");
  if (config.pattern != MissingPattern::P1 && 2.0 * config.psi > 1.0)
    throw Error(ErrorKind::PatternInfeasible, "2 psi N exceeds N");
  StudyResult res;
  res.replications.resize(static_cast<std::size_t>(opts.n_reps));
  parallel_for(res.replications.size(), opts.threads,
               [&](std::size_t r) { res.replications[r] = run_replication(config, opts, static_cast<int>(r)); });
  res.metrics = aggregate(res.replications, config.beta_true, opts.select_factors);
  const double rate = static_cast<double>(res.metrics.n_failed) / static_cast<double>(opts.n_reps);
  if (res.metrics.n_failed > 0 && rate >= opts.max_failure_rate) {
    std::string first;
    for (const auto& r : res.replications)
      if (!r.ok) {
        first = r.failure;
        break;
      }
    throw Error(ErrorKind::NoConvergence, std::to_string(res.metrics.n_failed) + " of " +
                                              std::to_string(opts.n_reps) + " replications failed; first: " + first);
  }
  return res;
}

inline std::string table_header() { return "nbar,tbar,psi,pattern,config,bias,ratio,size,ic2,bic3,er,gr,ed,pa,reps"; }

inline std::string table_row(const DgpConfig& c, const SimMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(10) << c.n_bar << ',' << c.t_bar << ',' << c.psi << ',' << to_string(c.pattern) << ','
     << to_string(c.error_config) << ',' << m.rel_bias_pct << ',' << m.se_sd_ratio << ',' << m.size_at_5pct;
  for (std::size_t j = 0; j < 6; ++j) {
    os << ',';
    if (m.mean_r_hat) os << (*m.mean_r_hat)[j];
  }
  os << ',' << (m.n_reps - m.n_failed);
  return os.str();
}

}  // namespace ifepanel::sim
