#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace demotune {

enum class ErrorKind {
  UnbalancedBrace,
  UnknownSlot,
  MissingMask,
  MultipleMask,
  OverLength,
  UnknownLabel,
  NoMaskPosition,
  DegenerateNorm,
  EmptyClass,
  ParseError,
  InsufficientExamples,
  EmptyTestSet,
  DivergedLoss,
  InvalidArgument,
  CheckpointMismatch,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Detail text without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace demotune
