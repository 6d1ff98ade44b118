#pragma once

#include <stdexcept>
#include <string>

namespace sparsebody {

/// Base for every error raised by the library. Each subclass maps onto one
/// CLI exit status (see tools/sparsebody.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or array extents that do not satisfy an operation's shape rule.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Unknown primitive, missing patch, malformed config entry.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar backward root,
/// skinning rows that do not sum to one, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Malformed input files or frames that cannot be processed.
class DataError : public Error {
 public:
  using Error::Error;
};

class ModelValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateRotationError : public NumericError {
 public:
  using NumericError::NumericError;
};

class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};

class StagingError : public Error {
 public:
  using Error::Error;
};

class LookupError : public ConfigurationError {
 public:
  using ConfigurationError::ConfigurationError;
};

}  // namespace sparsebody
