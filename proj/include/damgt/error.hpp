#pragma once

#include <stdexcept>
#include <string>

namespace damgt {

// Exit-code contract used by the CLI: 0 success, 2 configuration error,
// 3 data error, 4 numeric error. Anything else maps to 1.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class NumericError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

// Data-class specializations.
class ParseError : public DataError {
  public:
    using DataError::DataError;
};

class IndexError : public DataError {
  public:
    using DataError::DataError;
};

class DimensionError : public DataError {
  public:
    using DataError::DataError;
};

class StaleCacheError : public DataError {
  public:
    using DataError::DataError;
};

class CorruptCacheError : public DataError {
  public:
    using DataError::DataError;
};

class UndefinedMetricError : public DataError {
  public:
    using DataError::DataError;
};

// Config-class specializations.
class ShapeError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

class UnsupportedPatternError : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

}  // namespace damgt
