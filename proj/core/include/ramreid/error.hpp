#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ramreid {

enum class ErrorKind {
  kShape,
  kValue,
  kState,
  kParse,
  kIo,
  kConfig,
};

std::string_view error_kind_name(ErrorKind kind);

// Base exception for every failure raised by the library. The kind doubles as
// the machine-readable category the CLI reports.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error(ErrorKind::kShape, message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message) : Error(ErrorKind::kValue, message) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& message) : Error(ErrorKind::kState, message) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message) : Error(ErrorKind::kParse, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::kIo, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorKind::kConfig, message) {}
};

// Throws the subclass matching `kind`, so callers can re-raise with added
// context without losing the exception type.
[[noreturn]] void throw_error(ErrorKind kind, const std::string& message);

}  // namespace ramreid
