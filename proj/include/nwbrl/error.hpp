#pragma once

#include <stdexcept>
#include <string>

namespace nwbrl {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  NotPositiveDefinite,
  InvalidDof,
  DegenerateDenominator,
  NonScalarRoot,
  NonFiniteGradient,
  NonFiniteLoss,
  EpisodeExhausted,
  NotOracleFamily,
  EmptyInput,
  InsufficientData,
  ChecksumMismatch,
  Io,
  Config,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix, for rethrowing with added context.
  const std::string& detail() const noexcept { return detail_; }

  // Errors that indicate numerical breakdown rather than bad input.
  bool numerical() const noexcept {
    return code_ == ErrorCode::NotPositiveDefinite ||
           code_ == ErrorCode::DegenerateDenominator ||
           code_ == ErrorCode::NonFiniteGradient ||
           code_ == ErrorCode::NonFiniteLoss;
  }

 private:
  ErrorCode code_;
  std::string detail_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace nwbrl
