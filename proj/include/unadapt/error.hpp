#pragma once

#include <stdexcept>
#include <string>

namespace unadapt {

// Process exit codes used by the command line tool.
enum class ExitCode : int { kOk = 0, kValidation = 1, kData = 2, kRuntime = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

// Bad arguments, bad configuration, shape mismatches.
class ValidationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kValidation; }
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Inputs that parse but violate a data invariant.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class CorpusIncompleteError : public DataError {
 public:
  using DataError::DataError;
};

class ConsistencyError : public DataError {
 public:
  using DataError::DataError;
};

class StaleCacheError : public DataError {
 public:
  using DataError::DataError;
};

class CacheMissError : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateInputError : public DataError {
 public:
  using DataError::DataError;
};

// Failures of the environment or of the numerics during a run.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kRuntime; }
};

class TransportError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class NumericalError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace unadapt
