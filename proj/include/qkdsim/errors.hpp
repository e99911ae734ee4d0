#pragma once

#include <exception>
#include <stdexcept>
#include <string>
#include <utility>

namespace qkdsim {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument is outside the domain of the quantity being computed.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Finite-sample correction requested on an empty sample.
class DegenerateSampleError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Measured singles are fully explained by noise (pair rate would be negative).
class NegativeSignalError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Coincidences do not exceed the accidental level; attenuation is undefined.
class AccidentalDominatedError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Invalid call shape (empty grid, bad bounds, mismatched lengths).
class UsageError : public Error {
 public:
  using Error::Error;
};

// No pair rate in the searched range gives a positive key rate.
class NoKeyError : public Error {
 public:
  NoKeyError(const std::string& what, double loss_db) : Error(what), loss_db_(loss_db) {}
  double loss_db() const noexcept { return loss_db_; }

 private:
  double loss_db_;
};

// Error correction must abort (QBER at or above 0.5).
class AbortError : public Error {
 public:
  using Error::Error;
};

// QBER estimation impossible (empty basis).
class EstimationError : public Error {
 public:
  using Error::Error;
};

// No significant correlation peak between two tag streams.
class SyncError : public Error {
 public:
  SyncError(const std::string& what, double best_significance)
      : Error(what), best_significance_(best_significance) {}
  double best_significance() const noexcept { return best_significance_; }

 private:
  double best_significance_;
};

// Malformed input file (tags, profiles, configs, stats).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A loss/noise profile does not cover the requested time span.
class CoverageError : public Error {
 public:
  using Error::Error;
};

// Requested output longer than the input allows.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Pipeline failure tagged with the stage that produced it. The original
// exception is kept so callers can still dispatch on its type.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, std::exception_ptr cause)
      : Error(stage + ": " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}
  const std::string& stage() const noexcept { return stage_; }
  [[noreturn]] void rethrow_cause() const {
    if (!cause_) throw Error(what());
    std::rethrow_exception(cause_);
  }

 private:
  std::string stage_;
  std::exception_ptr cause_;
};

}  // namespace qkdsim
