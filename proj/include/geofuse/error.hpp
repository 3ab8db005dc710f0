#pragma once

#include <stdexcept>
#include <string>

namespace geofuse {

// Broad failure classes. The CLI maps each to its own exit code.
enum class ErrorKind {
  invalid_argument,
  config,
  data,
  numeric,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorKind::invalid_argument, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

// Raised for latitude/longitude values that are non-finite or out of range.
class InvalidCoordinate : public DataError {
 public:
  explicit InvalidCoordinate(const std::string& what) : DataError(what) {}
};

class ShapeMismatch : public InvalidArgument {
 public:
  explicit ShapeMismatch(const std::string& what) : InvalidArgument(what) {}
};

// A backward pass was given a forward cache recorded against different
// parameter values.
class StaleCache : public InvalidArgument {
 public:
  explicit StaleCache(const std::string& what) : InvalidArgument(what) {}
};

}  // namespace geofuse
