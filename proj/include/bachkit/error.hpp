#pragma once

#include <stdexcept>
#include <string>

namespace bachkit {

enum class ErrorKind {
  Shape,
  Parameter,
  Numeric,
  Taxonomy,
  Validation,
  EmptyInstance,
  Ingestion,
  DegenerateBackground,
  Comparison,
  Retrieval,
  Fusion,
  Training,
  Configuration,
  NotFound,
  Io,
};

const char* to_string(ErrorKind kind);
/// Machine-readable identifier, e.g. "validation", "not_found".
const char* error_code(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (CLI, HTTP
/// layer) can map it to an exit code or status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace bachkit
