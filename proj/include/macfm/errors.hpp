#pragma once

#include <stdexcept>
#include <string>

namespace macfm {

/// Base for every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside an operation's domain (e.g. t outside [0, 1]).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or combination (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable, malformed or inconsistent input data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or divergence during training/inference (exit code 4).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Checkpoint or mask file with a bad magic, version, or truncated payload.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace macfm
