#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cohort_agent/error.hpp"

namespace cohort_agent {

/// Strongly typed name. Cohorts and models are both identified by strings
/// but must never be mixed up.
template <typename Tag>
class Name {
 public:
  Name() = default;
  explicit Name(std::string value) : value_(std::move(value)) {}
  explicit Name(const char* value) : value_(value) {}

  [[nodiscard]] const std::string& str() const noexcept { return value_; }
  [[nodiscard]] bool empty() const noexcept { return value_.empty(); }

  friend auto operator<=>(const Name&, const Name&) = default;
  friend bool operator==(const Name&, const Name&) = default;

 private:
  std::string value_;
};

using CohortId = Name<struct CohortTag>;
using ModelId = Name<struct ModelTag>;

inline constexpr std::size_t kFeatureRows = 5;
inline constexpr std::size_t kFeatureCols = 128;

/// Per-patient imaging embedding, row-major. Nominally 5x128; the shape is
/// carried explicitly so malformed inputs can be represented and rejected.
struct FeatureMap {
  std::size_t rows = kFeatureRows;
  std::size_t cols = kFeatureCols;
  std::vector<float> values = std::vector<float>(kFeatureRows * kFeatureCols, 0.0f);

  [[nodiscard]] float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  [[nodiscard]] std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values).subspan(r * cols, cols);
  }

  [[nodiscard]] bool has_standard_shape() const noexcept {
    return rows == kFeatureRows && cols == kFeatureCols && values.size() == rows * cols;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

/// Missing is std::monostate.
using MetadataValue = std::variant<std::monostate, double, std::string>;
using MetadataRecord = std::map<std::string, MetadataValue>;

inline bool is_missing(const MetadataValue& v) noexcept { return std::holds_alternative<std::monostate>(v); }

enum class FieldKind { Numeric, Categorical };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::Numeric;
  std::vector<std::string> categories;  // categorical only, one-hot order
  std::string units;
  bool missing_indicator = false;
};

/// Declared metadata fields plus the dataset's cohort set {1..C}.
struct MetadataSchema {
  std::vector<FieldSpec> fields;
  std::vector<CohortId> cohorts;

  [[nodiscard]] const FieldSpec* field(const std::string& name) const {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const FieldSpec& f) { return f.name == name; });
    return it == fields.end() ? nullptr : &*it;
  }
  [[nodiscard]] bool has_cohort(const CohortId& c) const {
    return std::find(cohorts.begin(), cohorts.end(), c) != cohorts.end();
  }
};

struct PatientRecord {
  std::string patient_id;
  CohortId cohort;
  MetadataRecord metadata;
  FeatureMap features;
  int label = 0;  // 1 = cancer, 0 = benign
  int timepoints = 1;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// Retrieval representation: encoded metadata followed by the weighted
/// feature block.
using FusedVector = std::vector<double>;

struct RiskPrediction {
  double probability = 0.0;
  ModelId model;
  CohortId cohort;  // retrieved cohort
  std::vector<std::string> neighbor_ids;
};

struct ValidationIssue {
  ErrorCode code;
  std::string detail;
};

struct Validation {
  std::optional<PatientRecord> record;
  std::vector<ValidationIssue> issues;

  [[nodiscard]] bool ok() const noexcept { return issues.empty(); }
};

/// Checks every record invariant against the schema and reports all
/// violations at once. Missing metadata values are legal here; they are
/// resolved at encoding time.
inline Validation validate_record(const PatientRecord& record, const MetadataSchema& schema) {
  Validation out;
  auto fail = [&](ErrorCode code, std::string detail) { out.issues.push_back({code, std::move(detail)}); };

  if (record.patient_id.empty()) fail(ErrorCode::InvalidArgument, "empty patient_id");
  if (!schema.has_cohort(record.cohort)) fail(ErrorCode::UnknownCohort, record.cohort.str());
  if (record.label != 0 && record.label != 1)
    fail(ErrorCode::LabelDomain, "label " + std::to_string(record.label) + " not in {0,1}");
  if (record.timepoints < 1) fail(ErrorCode::InvalidArgument, "timepoints must be >= 1");

  const auto& fm = record.features;
  if (!fm.has_standard_shape()) {
    fail(ErrorCode::ShapeMismatch,
         std::to_string(fm.rows) + "x" + std::to_string(fm.cols) + " (values " + std::to_string(fm.values.size()) +
             "), expected 5x128");
  }
  if (std::any_of(fm.values.begin(), fm.values.end(), [](float v) { return !std::isfinite(v); }))
    fail(ErrorCode::NonFinite, "feature map contains non-finite values");

  for (const auto& [name, value] : record.metadata) {
    const FieldSpec* spec = schema.field(name);
    if (spec == nullptr) {
      fail(ErrorCode::SchemaViolation, "field '" + name + "' not in schema");
      continue;
    }
    if (is_missing(value)) continue;
    if (spec->kind == FieldKind::Numeric) {
      if (!std::holds_alternative<double>(value)) {
        fail(ErrorCode::SchemaViolation, "field '" + name + "' must be numeric");
      } else if (!std::isfinite(std::get<double>(value))) {
        fail(ErrorCode::NonFinite, "field '" + name + "'");
      }
    } else if (!std::holds_alternative<std::string>(value)) {
      fail(ErrorCode::SchemaViolation, "field '" + name + "' must be categorical");
    }
  }

  if (out.issues.empty()) out.record = record;
  return out;
}

}  // namespace cohort_agent

template <typename Tag>
struct std::hash<cohort_agent::Name<Tag>> {
  std::size_t operator()(const cohort_agent::Name<Tag>& n) const noexcept { return std::hash<std::string>{}(n.str()); }
};
