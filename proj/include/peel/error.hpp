#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace peel {

enum class ErrorKind {
  kNotFound,
  kParse,
  kEmptyDataset,
  kConfig,
  kBudgetInfeasible,
  kNumerical,
  kSchemaMismatch,
  kIo,
  kFormat,
};

std::string_view ErrorKindName(ErrorKind kind);

// All pipeline failures surface as this exception. The kind is stable and is
// what the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void Require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) Fail(kind, message);
}

}  // namespace peel
