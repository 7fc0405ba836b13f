#pragma once

#include <stdexcept>
#include <string>

namespace fwdecg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments supplied by the caller (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shape or length mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or divergence during a numerical computation (CLI exit code 2).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnknownVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedPayloadError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace fwdecg
