#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cohort_agent/core.hpp"

namespace cohort_agent {

enum class Aggregation { Pooled, Flattened };

struct FusionConfig {
  Aggregation aggregation = Aggregation::Pooled;
  double feature_weight = 0.1;  // alpha, applied before concatenation

  void check() const {
    if (!(feature_weight >= 0.0) || !std::isfinite(feature_weight))
      throw Error(ErrorCode::InvalidArgument, "feature weight must be finite and >= 0");
  }
};

/// Column layout and statistics for metadata encoding, fitted on the
/// retrieval database only.
struct EncodingStats {
  struct Field {
    std::string name;
    FieldKind kind = FieldKind::Numeric;
    double mean = 0.0;
    double sd = 1.0;
    bool constant = false;  // zero variance, or too few observations
    std::vector<std::string> categories;
    bool missing_indicator = false;

    [[nodiscard]] std::size_t width() const noexcept {
      return (kind == FieldKind::Numeric ? 1 : categories.size()) + (missing_indicator ? 1 : 0);
    }
  };
  std::vector<Field> fields;

  [[nodiscard]] std::size_t metadata_dim() const noexcept {
    std::size_t d = 0;
    for (const auto& f : fields) d += f.width();
    return d;
  }
};

inline EncodingStats fit_encoding(std::span<const PatientRecord> database, const MetadataSchema& schema) {
  if (database.empty()) throw Error(ErrorCode::EmptyInput, "cannot fit encoding on an empty database");
  EncodingStats stats;
  for (const auto& spec : schema.fields) {
    EncodingStats::Field f;
    f.name = spec.name;
    f.kind = spec.kind;
    f.missing_indicator = spec.missing_indicator;
    if (spec.kind == FieldKind::Categorical) {
      f.categories = spec.categories;
    } else {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : database) {
        auto it = r.metadata.find(spec.name);
        if (it == r.metadata.end() || !std::holds_alternative<double>(it->second)) continue;
        sum += std::get<double>(it->second);
        ++n;
      }
      if (n > 0) f.mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (const auto& r : database) {
        auto it = r.metadata.find(spec.name);
        if (it == r.metadata.end() || !std::holds_alternative<double>(it->second)) continue;
        const double dv = std::get<double>(it->second) - f.mean;
        ss += dv * dv;
      }
      f.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
      f.constant = !(f.sd > 0.0);
      if (f.constant) f.sd = 1.0;
    }
    stats.fields.push_back(std::move(f));
  }
  return stats;
}

/// Numeric fields are z-scored, categoricals one-hot. A missing numeric
/// encodes as 0 (the database mean); unknown categories produce an all-zero
/// block and a warning.
inline std::vector<double> encode_metadata(const PatientRecord& record, const EncodingStats& stats,
                                           std::vector<std::string>* warnings = nullptr) {
  std::vector<double> out;
  out.reserve(stats.metadata_dim());
  for (const auto& f : stats.fields) {
    auto it = record.metadata.find(f.name);
    const bool missing = it == record.metadata.end() || is_missing(it->second);
    if (f.kind == FieldKind::Numeric) {
      double z = 0.0;
      if (!missing) {
        if (!std::holds_alternative<double>(it->second))
          throw Error(ErrorCode::SchemaViolation, "field '" + f.name + "' must be numeric");
        if (!f.constant) z = (std::get<double>(it->second) - f.mean) / f.sd;
      }
      out.push_back(z);
    } else {
      std::size_t hot = f.categories.size();
      if (!missing) {
        if (!std::holds_alternative<std::string>(it->second))
          throw Error(ErrorCode::SchemaViolation, "field '" + f.name + "' must be categorical");
        const auto& value = std::get<std::string>(it->second);
        for (std::size_t c = 0; c < f.categories.size(); ++c)
          if (f.categories[c] == value) hot = c;
        if (hot == f.categories.size() && warnings != nullptr)
          warnings->push_back(record.patient_id + ": unknown category '" + value + "' for field '" + f.name + "'");
      }
      for (std::size_t c = 0; c < f.categories.size(); ++c) out.push_back(c == hot ? 1.0 : 0.0);
    }
    if (f.missing_indicator) out.push_back(missing ? 1.0 : 0.0);
  }
  return out;
}

/// Mean over the five rows, one value per column.
inline std::vector<double> pool_features(const FeatureMap& map) {
  if (!map.has_standard_shape()) throw Error(ErrorCode::ShapeMismatch, "expected 5x128");
  std::vector<double> out(map.cols, 0.0);
  for (std::size_t r = 0; r < map.rows; ++r)
    for (std::size_t c = 0; c < map.cols; ++c) out[c] += static_cast<double>(map.at(r, c));
  for (auto& v : out) v /= static_cast<double>(map.rows);
  return out;
}

inline std::vector<double> flatten_features(const FeatureMap& map) {
  if (!map.has_standard_shape()) throw Error(ErrorCode::ShapeMismatch, "expected 5x128");
  return {map.values.begin(), map.values.end()};
}

inline std::size_t fused_dimension(const EncodingStats& stats, const FusionConfig& config) noexcept {
  return stats.metadata_dim() + (config.aggregation == Aggregation::Pooled ? kFeatureCols : kFeatureRows * kFeatureCols);
}

inline FusedVector fuse(const PatientRecord& record, const EncodingStats& stats, const FusionConfig& config,
                        std::vector<std::string>* warnings = nullptr) {
  config.check();
  FusedVector out = encode_metadata(record, stats, warnings);
  const auto block =
      config.aggregation == Aggregation::Pooled ? pool_features(record.features) : flatten_features(record.features);
  out.reserve(out.size() + block.size());
  for (double v : block) out.push_back(config.feature_weight * v);
  return out;
}

inline std::string to_string(Aggregation a) { return a == Aggregation::Pooled ? "pooled" : "flattened"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "pooled") return Aggregation::Pooled;
  if (s == "flattened") return Aggregation::Flattened;
  throw Error(ErrorCode::InvalidArgument, "aggregation must be pooled|flattened, got '" + s + "'");
}

}  // namespace cohort_agent
