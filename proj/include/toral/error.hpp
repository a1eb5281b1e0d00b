#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace toral {

enum class ErrorKind {
  NonUnimodular,
  TrivialMatrix,
  CapacityExceeded,
  ThresholdUnmet,
  AlignmentRequired,
  DimensionMismatch,
  InvalidPartition,
  InvalidArgument,
  Overflow,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::NonUnimodular: return "NonUnimodular";
    case ErrorKind::TrivialMatrix: return "TrivialMatrix";
    case ErrorKind::CapacityExceeded: return "CapacityExceeded";
    case ErrorKind::ThresholdUnmet: return "ThresholdUnmet";
    case ErrorKind::AlignmentRequired: return "AlignmentRequired";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidPartition: return "InvalidPartition";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Overflow: return "Overflow";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace toral
