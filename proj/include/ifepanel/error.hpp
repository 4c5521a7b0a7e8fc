#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ifepanel {

enum class ErrorKind {
  DuplicateCell,
  RaggedRow,
  NonFinite,
  ShapeMismatch,
  EmptyPanel,
  RankTooLarge,
  EigenFailure,
  NoConvergence,
  Collinear,
  DegenerateProjector,
  ZeroStdErr,
  UnitRoot,
  SpectrumFailure,
  PatternInfeasible,
  InvalidArgument,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DuplicateCell: return "DuplicateCell";
    case ErrorKind::RaggedRow: return "RaggedRow";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyPanel: return "EmptyPanel";
    case ErrorKind::RankTooLarge: return "RankTooLarge";
    case ErrorKind::EigenFailure: return "EigenFailure";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::Collinear: return "Collinear";
    case ErrorKind::DegenerateProjector: return "DegenerateProjector";
    case ErrorKind::ZeroStdErr: return "ZeroStdErr";
    case ErrorKind::UnitRoot: return "UnitRoot";
    case ErrorKind::SpectrumFailure: return "SpectrumFailure";
    case ErrorKind::PatternInfeasible: return "PatternInfeasible";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Data errors map to CLI exit code 2, numeric ones to 3.
  bool is_data_error() const noexcept {
    switch (kind_) {
      case ErrorKind::DuplicateCell:
      case ErrorKind::RaggedRow:
      case ErrorKind::NonFinite:
      case ErrorKind::ShapeMismatch:
      case ErrorKind::EmptyPanel:
      case ErrorKind::InvalidArgument:
      case ErrorKind::Io:
      case ErrorKind::PatternInfeasible:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

/// Non-convergence that carries the last iterate so callers can inspect or report it.
template <class Partial>
class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, Partial partial)
      : Error(ErrorKind::NoConvergence, what), partial_(std::move(partial)) {}

  const Partial& partial() const noexcept { return partial_; }

 private:
  Partial partial_;
};

}  // namespace ifepanel
