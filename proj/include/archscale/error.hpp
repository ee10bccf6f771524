#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace archscale {

enum class ErrorCode {
  InvalidArgument,
  UnknownVertex,
  PrunedToDisconnected,
  PathExplosion,
  SyntaxError,
  SemanticError,
  UnknownOperator,
  NotWeightedEdge,
  PlanMismatch,
  KernelTooLarge,
  ShapeMismatch,
  AllRunsDiverged,
  InsufficientPoints,
  DegenerateInput,
  IdMismatch,
  BadMagic,
  TruncatedFile,
  DegenerateData,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code lets
/// callers (the CLI in particular) map failures to exit statuses without
/// string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace archscale
