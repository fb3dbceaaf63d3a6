#include "debias/errors.hpp"

namespace debias {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorKind::MissingPromptBank: return "MissingPromptBank";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::BadTemplate: return "BadTemplate";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::NegativeAlpha: return "NegativeAlpha";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptySupportSet: return "EmptySupportSet";
    case ErrorKind::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

}  // namespace debias
