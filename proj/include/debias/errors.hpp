#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace debias {

/// Every failure the library can surface. The CLI prints the variant name.
enum class ErrorKind {
  ZeroVector,
  NonFinite,
  FormatError,
  DimensionMismatch,
  LabelOutOfRange,
  IoError,
  EmptyInput,
  NonPositiveTemperature,
  MissingPromptBank,
  InsufficientSamples,
  DegenerateVariance,
  LengthMismatch,
  InsufficientData,
  BadTemplate,
  KTooLarge,
  BatchTooSmall,
  NegativeAlpha,
  ShapeMismatch,
  EmptySupportSet,
  DimensionTooSmall,
  InvalidConfig,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace debias
