#pragma once

#include <stdexcept>
#include <string>

namespace qsdist {

enum class ErrorKind {
  NonFinite,
  ToleranceNotMet,
  DegenerateGrid,
  OutOfRange,
  InvalidArgument,
  Overshoot,
  NoConvergence,
  NoDecay,
  WindowTooSmall,
  InvalidPermutation,
  TooLarge,
  SigmaTooSmall,
  EpsilonUnavailable,
  RadiusExceeded,
  TailBudgetExceeded,
  StripExceeded,
  MissingDecayFit,
  InsufficientSamples,
  Parse,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ToleranceNotMet: return "ToleranceNotMet";
    case ErrorKind::DegenerateGrid: return "DegenerateGrid";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Overshoot: return "OvershootError";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NoDecay: return "NoDecay";
    case ErrorKind::WindowTooSmall: return "WindowTooSmall";
    case ErrorKind::InvalidPermutation: return "InvalidPermutation";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::SigmaTooSmall: return "SigmaTooSmall";
    case ErrorKind::EpsilonUnavailable: return "EpsilonUnavailable";
    case ErrorKind::RadiusExceeded: return "RadiusExceeded";
    case ErrorKind::TailBudgetExceeded: return "TailBudgetExceeded";
    case ErrorKind::StripExceeded: return "StripExceeded";
    case ErrorKind::MissingDecayFit: return "MissingDecayFit";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::Parse: return "Parse";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace qsdist
