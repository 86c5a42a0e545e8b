#include "ramreid/error.hpp"

namespace ramreid {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kValue: return "value";
    case ErrorKind::kState: return "state";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

void throw_error(ErrorKind kind, const std::string& message) {
  switch (kind) {
    case ErrorKind::kShape: throw ShapeError(message);
    case ErrorKind::kValue: throw ValueError(message);
    case ErrorKind::kState: throw StateError(message);
    case ErrorKind::kParse: throw ParseError(message);
    case ErrorKind::kIo: throw IoError(message);
    case ErrorKind::kConfig: throw ConfigError(message);
  }
  throw Error(kind, message);
}

}  // namespace ramreid
