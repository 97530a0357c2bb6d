#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bitopt {

// Error taxonomy shared by the whole library. The C API maps each class to a
// stable integer code, so new classes go at the end of the enum.
enum class ErrorCode : int {
  kInput = 1,
  kParameter = 2,
  kDomain = 3,
  kOverflow = 4,
  kSingular = 5,
  kUpdateRejected = 6,
  kNumericFailure = 7,
  kCertifiedFailure = 8,
  kPhaseTransition = 9,
  kRetryExhausted = 10,
  kNotImplemented = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg)
      : std::runtime_error(std::move(msg)), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class InputError : public Error {
 public:
  explicit InputError(std::string msg) : Error(ErrorCode::kInput, std::move(msg)) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(std::string msg) : Error(ErrorCode::kParameter, std::move(msg)) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(std::string msg) : Error(ErrorCode::kDomain, std::move(msg)) {}
};

// Integer part exceeded the context budget. `index` is the offending vector
// or matrix slot when known, -1 otherwise.
class OverflowError : public Error {
 public:
  OverflowError(std::string msg, long index = -1)
      : Error(ErrorCode::kOverflow, std::move(msg)), index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

class SingularMatrixError : public Error {
 public:
  SingularMatrixError(std::string msg, long pivot_column = -1)
      : Error(ErrorCode::kSingular, std::move(msg)), pivot_column_(pivot_column) {}
  long pivot_column() const { return pivot_column_; }

 private:
  long pivot_column_;
};

class UpdateRejectedError : public Error {
 public:
  explicit UpdateRejectedError(std::string msg)
      : Error(ErrorCode::kUpdateRejected, std::move(msg)) {}
};

class NumericFailureError : public Error {
 public:
  NumericFailureError(std::string msg, long iteration = -1)
      : Error(ErrorCode::kNumericFailure, std::move(msg)), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

// A runtime invariant that the underlying analysis guarantees was observed to
// fail. Tests treat this as an assertion, not a recoverable condition.
class CertifiedFailureError : public Error {
 public:
  CertifiedFailureError(std::string msg, long iteration = -1)
      : Error(ErrorCode::kCertifiedFailure, std::move(msg)), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

class PhaseTransitionError : public Error {
 public:
  explicit PhaseTransitionError(std::string msg)
      : Error(ErrorCode::kPhaseTransition, std::move(msg)) {}
};

class RetryExhaustedError : public Error {
 public:
  explicit RetryExhaustedError(std::string msg)
      : Error(ErrorCode::kRetryExhausted, std::move(msg)) {}
};

class NotImplementedError : public Error {
 public:
  explicit NotImplementedError(std::string msg)
      : Error(ErrorCode::kNotImplemented, std::move(msg)) {}
};

}  // namespace bitopt
