#pragma once

#include <stdexcept>
#include <string>

namespace clinembed {

/// Root of every exception thrown by the library. Each subclass names the
/// category of failure so the CLI can map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced by an operation or a diverging training run.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a precondition (non-scalar loss, non-deterministic graph).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace clinembed
