#pragma once

#include <stdexcept>
#include <string>

namespace fedgrow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid architecture, parameter set, or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or activation encountered during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A growth transform was requested that cannot preserve the function.
class TransformError : public Error {
 public:
  using Error::Error;
};

/// The layer graph does not have the structure a transform needs.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A model schedule failed validation.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedgrow
