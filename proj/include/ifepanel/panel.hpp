#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ifepanel/error.hpp"

namespace ifepanel {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct ObsIndex {
  Index unit = 0;
  Index period = 0;
  auto operator<=>(const ObsIndex&) const = default;
};

/// One row of long-format input: outcome and K regressors for a (unit, period) cell.
struct LongRecord {
  std::string unit;
  std::string period;
  double y = 0.0;
  std::vector<double> x;
};

/// Notes collected while building a panel (dropped empty rows/columns, etc.).
struct ConstructionReport {
  std::vector<std::string> warnings;
  Index dropped_units = 0;
  Index dropped_periods = 0;
};

/// Dense N x T matrix together with its observation mask. Cells outside the
/// mask are zero.
struct MaskedMatrix {
  Matrix values;
  Mask mask;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  Index n_observed() const { return mask.count(); }
};

/// Unbalanced panel on an N x T frame. Outcome and regressors are stored as
/// dense N x T matrices that are exactly zero outside the observed set.
/// Immutable after construction.
class PanelData {
 public:
  PanelData() = default;

  /// Builds a panel from a mask and dense data. Units or periods without any
  /// observation are dropped and the frame is renumbered; the drop is recorded
  /// in report().
  PanelData(Mask mask, Matrix y, std::vector<Matrix> x, std::vector<std::string> unit_keys = {},
            std::vector<std::string> period_keys = {}, std::vector<std::string> regressor_names = {}) {
    if (y.rows() != mask.rows() || y.cols() != mask.cols())
      throw Error(ErrorKind::ShapeMismatch, "outcome shape does not match mask");
    for (const auto& xk : x)
      if (xk.rows() != mask.rows() || xk.cols() != mask.cols())
        throw Error(ErrorKind::ShapeMismatch, "regressor shape does not match mask");
    if (unit_keys.empty())
      for (Index i = 0; i < mask.rows(); ++i) unit_keys.push_back(std::to_string(i));
    if (period_keys.empty())
      for (Index t = 0; t < mask.cols(); ++t) period_keys.push_back(std::to_string(t));
    if (static_cast<Index>(unit_keys.size()) != mask.rows() || static_cast<Index>(period_keys.size()) != mask.cols())
      throw Error(ErrorKind::ShapeMismatch, "key list length does not match frame");
    if (regressor_names.empty())
      for (std::size_t k = 0; k < x.size(); ++k) regressor_names.push_back("x" + std::to_string(k + 1));
    if (regressor_names.size() != x.size())
      throw Error(ErrorKind::ShapeMismatch, "regressor name count does not match K");

    std::vector<Index> keep_rows, keep_cols;
    for (Index i = 0; i < mask.rows(); ++i)
      if (mask.row(i).any()) keep_rows.push_back(i);
    for (Index t = 0; t < mask.cols(); ++t)
      if (mask.col(t).any()) keep_cols.push_back(t);
    if (keep_rows.empty() || keep_cols.empty()) throw Error(ErrorKind::EmptyPanel, "panel has no observations");

    report_.dropped_units = mask.rows() - static_cast<Index>(keep_rows.size());
    report_.dropped_periods = mask.cols() - static_cast<Index>(keep_cols.size());
    if (report_.dropped_units > 0)
      report_.warnings.push_back("dropped " + std::to_string(report_.dropped_units) + " unit(s) without observations");
    if (report_.dropped_periods > 0)
      report_.warnings.push_back("dropped " + std::to_string(report_.dropped_periods) +
                                 " period(s) without observations");

    const Index n_rows = static_cast<Index>(keep_rows.size());
    const Index n_cols = static_cast<Index>(keep_cols.size());
    mask_ = Mask(n_rows, n_cols);
    y_ = Matrix::Zero(n_rows, n_cols);
    x_.assign(x.size(), Matrix::Zero(n_rows, n_cols));
    for (Index a = 0; a < n_rows; ++a) {
      unit_keys_.push_back(unit_keys[keep_rows[a]]);
      for (Index b = 0; b < n_cols; ++b) {
        const Index i = keep_rows[a], t = keep_cols[b];
        const bool obs = mask(i, t);
        mask_(a, b) = obs;
        if (!obs) continue;
        y_(a, b) = y(i, t);
        for (std::size_t k = 0; k < x.size(); ++k) x_[k](a, b) = x[k](i, t);
      }
    }
    for (Index b = 0; b < n_cols; ++b) period_keys_.push_back(period_keys[keep_cols[b]]);
    regressor_names_ = std::move(regressor_names);
    index_observed();
  }

  Index n_units() const { return mask_.rows(); }
  Index n_periods() const { return mask_.cols(); }
  Index n_obs() const { return static_cast<Index>(observed_.size()); }
  Index n_regressors() const { return static_cast<Index>(x_.size()); }
  bool balanced() const { return n_obs() == n_units() * n_periods(); }

  /// Average cross-section and time-series lengths n/T and n/N.
  double n_bar() const { return static_cast<double>(n_obs()) / static_cast<double>(n_periods()); }
  double t_bar() const { return static_cast<double>(n_obs()) / static_cast<double>(n_units()); }

  const Mask& mask() const { return mask_; }
  const Matrix& y() const { return y_; }
  const Matrix& x(Index k) const { return x_.at(static_cast<std::size_t>(k)); }
  const std::vector<Matrix>& regressors() const { return x_; }
  bool observed(Index i, Index t) const { return mask_(i, t); }

  /// Observed cells in unit-major order.
  const std::vector<ObsIndex>& observed() const { return observed_; }
  /// Periods observed for unit i (the set D_i), ascending.
  std::span<const Index> unit_rows(Index i) const { return unit_rows_.at(static_cast<std::size_t>(i)); }
  /// Units observed in period t (the set D_t), ascending.
  std::span<const Index> period_columns(Index t) const { return period_cols_.at(static_cast<std::size_t>(t)); }

  const std::vector<std::string>& unit_keys() const { return unit_keys_; }
  const std::vector<std::string>& period_keys() const { return period_keys_; }
  const std::vector<std::string>& regressor_names() const { return regressor_names_; }
  const ConstructionReport& report() const { return report_; }

  /// Same frame and mask, new outcome/regressor values (zeroed outside the mask).
  PanelData with_values(Matrix y, std::vector<Matrix> x) const {
    if (y.rows() != n_units() || y.cols() != n_periods())
      throw Error(ErrorKind::ShapeMismatch, "outcome shape does not match panel");
    PanelData out = *this;
    out.y_ = mask_.select(y, 0.0);
    out.x_.clear();
    for (auto& xk : x) {
      if (xk.rows() != n_units() || xk.cols() != n_periods())
        throw Error(ErrorKind::ShapeMismatch, "regressor shape does not match panel");
      out.x_.push_back(mask_.select(xk, 0.0));
    }
    if (out.x_.size() != regressor_names_.size()) {
      out.regressor_names_.clear();
      for (std::size_t k = 0; k < out.x_.size(); ++k) out.regressor_names_.push_back("x" + std::to_string(k + 1));
    }
    return out;
  }

  /// W(beta) = y - sum_k beta_k x_k on the observed cells, zero elsewhere.
  Matrix residual_matrix(const Vector& beta) const {
    if (beta.size() != n_regressors()) throw Error(ErrorKind::ShapeMismatch, "beta has wrong length");
    Matrix w = y_;
    for (Index k = 0; k < n_regressors(); ++k) w.noalias() -= beta(k) * x_[static_cast<std::size_t>(k)];
    return w;
  }

  MaskedMatrix masked(const Matrix& values) const { return MaskedMatrix{mask_.select(values, 0.0), mask_}; }

 private:
  void index_observed() {
    observed_.clear();
    unit_rows_.assign(static_cast<std::size_t>(n_units()), {});
    period_cols_.assign(static_cast<std::size_t>(n_periods()), {});
    for (Index i = 0; i < n_units(); ++i)
      for (Index t = 0; t < n_periods(); ++t)
        if (mask_(i, t)) {
          observed_.push_back({i, t});
          unit_rows_[static_cast<std::size_t>(i)].push_back(t);
          period_cols_[static_cast<std::size_t>(t)].push_back(i);
        }
  }

  Mask mask_;
  Matrix y_;
  std::vector<Matrix> x_;
  std::vector<ObsIndex> observed_;
  std::vector<std::vector<Index>> unit_rows_;
  std::vector<std::vector<Index>> period_cols_;
  std::vector<std::string> unit_keys_;
  std::vector<std::string> period_keys_;
  std::vector<std::string> regressor_names_;
  ConstructionReport report_;
};

namespace detail {

inline bool parse_number(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

/// Sort keys numerically when every key parses as a number, lexicographically otherwise.
inline std::vector<std::string> canonical_key_order(std::vector<std::string> keys) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::vector<double> numeric(keys.size());
  bool all_numeric = true;
  for (std::size_t j = 0; j < keys.size() && all_numeric; ++j) all_numeric = parse_number(keys[j], numeric[j]);
  if (all_numeric) {
    std::vector<std::size_t> order(keys.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return numeric[a] < numeric[b]; });
    std::vector<std::string> sorted;
    for (std::size_t j : order) sorted.push_back(keys[j]);
    return sorted;
  }
  return keys;
}

}  // namespace detail

/// Builds a panel from long-format records. Units and periods are indexed in
/// sorted key order (numeric when all keys are numbers), so the result does not
/// depend on record order.
inline PanelData from_long_records(const std::vector<LongRecord>& records,
                                   std::vector<std::string> regressor_names = {}) {
  if (records.empty()) throw Error(ErrorKind::EmptyPanel, "no records");
  const std::size_t k_count = records.front().x.size();
  std::vector<std::string> units, periods;
  for (const auto& r : records) {
    if (r.x.size() != k_count)
      throw Error(ErrorKind::RaggedRow, "record (" + r.unit + "," + r.period + ") has " + std::to_string(r.x.size()) +
                                            " regressors, expected " + std::to_string(k_count));
    if (!std::isfinite(r.y) || !std::all_of(r.x.begin(), r.x.end(), [](double v) { return std::isfinite(v); }))
      throw Error(ErrorKind::NonFinite, "record (" + r.unit + "," + r.period + ") has a non-finite value");
    units.push_back(r.unit);
    periods.push_back(r.period);
  }
  units = detail::canonical_key_order(std::move(units));
  periods = detail::canonical_key_order(std::move(periods));
  std::map<std::string, Index> unit_pos, period_pos;
  for (std::size_t j = 0; j < units.size(); ++j) unit_pos[units[j]] = static_cast<Index>(j);
  for (std::size_t j = 0; j < periods.size(); ++j) period_pos[periods[j]] = static_cast<Index>(j);

  const auto n = static_cast<Index>(units.size());
  const auto t = static_cast<Index>(periods.size());
  Mask mask = Mask::Constant(n, t, false);
  Matrix y = Matrix::Zero(n, t);
  std::vector<Matrix> x(k_count, Matrix::Zero(n, t));
  for (const auto& r : records) {
    const Index i = unit_pos[r.unit], s = period_pos[r.period];
    if (mask(i, s)) throw Error(ErrorKind::DuplicateCell, "duplicate cell (" + r.unit + "," + r.period + ")");
    mask(i, s) = true;
    y(i, s) = r.y;
    for (std::size_t k = 0; k < k_count; ++k) x[k](i, s) = r.x[k];
  }
  return PanelData(std::move(mask), std::move(y), std::move(x), std::move(units), std::move(periods),
                   std::move(regressor_names));
}

/// Keeps observed cells of m and zeroes the rest.
inline MaskedMatrix projection_d(const Matrix& m, const Mask& mask) {
  if (m.rows() != mask.rows() || m.cols() != mask.cols())
    throw Error(ErrorKind::ShapeMismatch, "matrix shape does not match mask");
  return MaskedMatrix{mask.select(m, 0.0), mask};
}

inline MaskedMatrix projection_d(const Matrix& m, const PanelData& d) { return projection_d(m, d.mask()); }

/// Keeps missing cells of m and zeroes the observed ones.
inline Matrix projection_d_perp(const Matrix& m, const Mask& mask) {
  if (m.rows() != mask.rows() || m.cols() != mask.cols())
    throw Error(ErrorKind::ShapeMismatch, "matrix shape does not match mask");
  return mask.select(0.0, m);
}

struct WithinOptions {
  double tol = 1e-10;
  long max_iter = 100000;
};

/// Residual of v (on the observed cells) after removing unit and period
/// means by alternating demeaning over D_i and D_t.
inline Matrix demean_two_way(const Matrix& v, const PanelData& d, const WithinOptions& opts = {}) {
  Matrix out = d.mask().select(v, 0.0);
  for (long sweep = 0; sweep < opts.max_iter; ++sweep) {
    double max_change = 0.0;
    for (Index i = 0; i < d.n_units(); ++i) {
      const auto rows = d.unit_rows(i);
      double sum = 0.0;
      for (Index t : rows) sum += out(i, t);
      const double mean = sum / static_cast<double>(rows.size());
      for (Index t : rows) out(i, t) -= mean;
      max_change = std::max(max_change, std::abs(mean));
    }
    for (Index t = 0; t < d.n_periods(); ++t) {
      const auto cols = d.period_columns(t);
      double sum = 0.0;
      for (Index i : cols) sum += out(i, t);
      const double mean = sum / static_cast<double>(cols.size());
      for (Index i : cols) out(i, t) -= mean;
      max_change = std::max(max_change, std::abs(mean));
    }
    if (max_change < opts.tol) return out;
  }
  throw Error(ErrorKind::NoConvergence, "two-way demeaning did not converge");
}

/// Projects additive unit and period effects out of y and every regressor.
inline PanelData two_way_within(const PanelData& d, const WithinOptions& opts = {}) {
  std::vector<Matrix> x;
  x.reserve(d.regressors().size());
  for (const auto& xk : d.regressors()) x.push_back(demean_two_way(xk, d, opts));
  return d.with_values(demean_two_way(d.y(), d, opts), std::move(x));
}

/// Appends y lagged 1..p periods as regressors named y_lag1..y_lagp. A cell is
/// kept only when all of its p lags are observed; lags run along the period
/// order of the frame.
inline PanelData with_outcome_lags(const PanelData& d, int p) {
  if (p < 0) throw Error(ErrorKind::InvalidArgument, "lag order must be nonnegative");
  if (p == 0) return d;
  const Index n = d.n_units(), t = d.n_periods();
  Mask mask = Mask::Constant(n, t, false);
  std::vector<Matrix> x = d.regressors();
  std::vector<std::string> names = d.regressor_names();
  for (int j = 1; j <= p; ++j) {
    x.push_back(Matrix::Zero(n, t));
    names.push_back("y_lag" + std::to_string(j));
  }
  const std::size_t base = d.regressors().size();
  for (Index i = 0; i < n; ++i)
    for (Index s = p; s < t; ++s) {
      bool ok = d.observed(i, s);
      for (int j = 1; ok && j <= p; ++j) ok = d.observed(i, s - j);
      if (!ok) continue;
      mask(i, s) = true;
      for (int j = 1; j <= p; ++j) x[base + static_cast<std::size_t>(j - 1)](i, s) = d.y()(i, s - j);
    }
  if (!mask.any()) throw Error(ErrorKind::EmptyPanel, "no cell has a complete set of lags");
  return PanelData(std::move(mask), d.y(), std::move(x), d.unit_keys(), d.period_keys(), std::move(names));
}

}  // namespace ifepanel
