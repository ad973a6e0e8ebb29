#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cohort_agent {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  UnknownCohort,
  SchemaViolation,
  NonFinite,
  LabelDomain,
  DimensionMismatch,
  ZeroNorm,
  EmptyInput,
  CorruptHeader,
  VersionMismatch,
  Truncated,
  Io,
  Parse,
  DuplicateId,
  UnknownModel,
  UnknownPatient,
  MissingCovariate,
  NotApplicable,
  NoApplicableModel,
  AdapterUnavailable,
  BackendUnavailable,
  AucUndefined,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ShapeMismatch: return "feature shape";
    case ErrorCode::UnknownCohort: return "unknown cohort";
    case ErrorCode::SchemaViolation: return "schema violation";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::LabelDomain: return "label domain";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::ZeroNorm: return "zero norm";
    case ErrorCode::EmptyInput: return "empty input";
    case ErrorCode::CorruptHeader: return "corrupt header";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::Truncated: return "truncated payload";
    case ErrorCode::Io: return "io error";
    case ErrorCode::Parse: return "parse error";
    case ErrorCode::DuplicateId: return "duplicate id";
    case ErrorCode::UnknownModel: return "unknown model";
    case ErrorCode::UnknownPatient: return "unknown patient";
    case ErrorCode::MissingCovariate: return "missing covariate";
    case ErrorCode::NotApplicable: return "model not applicable";
    case ErrorCode::NoApplicableModel: return "no applicable model";
    case ErrorCode::AdapterUnavailable: return "adapter unavailable";
    case ErrorCode::BackendUnavailable: return "backend unavailable";
    case ErrorCode::AucUndefined: return "AUC undefined";
  }
  return "unknown error";
}

/// Exception carrying a machine-checkable code. what() is "<code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
        code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cohort_agent
