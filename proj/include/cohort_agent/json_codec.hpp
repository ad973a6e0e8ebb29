#pragma once

#include <string>

#include <json.hpp>

#include "cohort_agent/core.hpp"

namespace cohort_agent {

using Json = nlohmann::json;

inline Json metadata_to_json(const MetadataRecord& metadata) {
  Json out = Json::object();
  for (const auto& [name, value] : metadata) {
    if (std::holds_alternative<double>(value)) {
      out[name] = std::get<double>(value);
    } else if (std::holds_alternative<std::string>(value)) {
      out[name] = std::get<std::string>(value);
    } else {
      out[name] = nullptr;
    }
  }
  return out;
}

inline MetadataRecord metadata_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, "metadata must be an object");
  MetadataRecord out;
  for (const auto& [name, value] : j.items()) {
    if (value.is_null()) {
      out[name] = std::monostate{};
    } else if (value.is_number()) {
      out[name] = value.get<double>();
    } else if (value.is_string()) {
      out[name] = value.get<std::string>();
    } else {
      throw Error(ErrorCode::Parse, "metadata field '" + name + "' must be number, string or null");
    }
  }
  return out;
}

/// Patient document used by adapters and the service. Features are inlined
/// as a rows x cols nested array.
inline Json record_to_json(const PatientRecord& r, bool include_features = true) {
  Json j;
  j["patient_id"] = r.patient_id;
  j["cohort"] = r.cohort.str();
  j["metadata"] = metadata_to_json(r.metadata);
  j["label"] = r.label;
  j["timepoints"] = r.timepoints;
  if (include_features) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < r.features.rows; ++i) {
      Json row = Json::array();
      for (std::size_t c = 0; c < r.features.cols; ++c) row.push_back(r.features.at(i, c));
      rows.push_back(std::move(row));
    }
    j["features"] = std::move(rows);
  }
  return j;
}

/// Parses a nested numeric array into a FeatureMap of whatever shape was
/// given; shape validation happens elsewhere.
inline FeatureMap features_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, "features must be an array of rows");
  FeatureMap fm;
  fm.rows = j.size();
  fm.cols = fm.rows == 0 ? 0 : j.front().size();
  fm.values.clear();
  fm.values.reserve(fm.rows * fm.cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != fm.cols) throw Error(ErrorCode::ShapeMismatch, "ragged feature rows");
    for (const auto& v : row) {
      if (!v.is_number()) throw Error(ErrorCode::Parse, "feature values must be numbers");
      fm.values.push_back(v.get<float>());
    }
  }
  return fm;
}

inline Json schema_to_json(const MetadataSchema& schema) {
  Json fields = Json::array();
  for (const auto& f : schema.fields) {
    Json jf;
    jf["name"] = f.name;
    jf["kind"] = f.kind == FieldKind::Numeric ? "numeric" : "categorical";
    if (f.kind == FieldKind::Categorical) jf["categories"] = f.categories;
    if (!f.units.empty()) jf["units"] = f.units;
    jf["missing_indicator"] = f.missing_indicator;
    fields.push_back(std::move(jf));
  }
  Json cohorts = Json::array();
  for (const auto& c : schema.cohorts) cohorts.push_back(c.str());
  return Json{{"fields", fields}, {"cohorts", cohorts}};
}

inline MetadataSchema schema_from_json(const Json& j) {
  MetadataSchema schema;
  for (const auto& jf : j.at("fields")) {
    FieldSpec f;
    f.name = jf.at("name").get<std::string>();
    const auto kind = jf.at("kind").get<std::string>();
    if (kind == "numeric") {
      f.kind = FieldKind::Numeric;
    } else if (kind == "categorical") {
      f.kind = FieldKind::Categorical;
      f.categories = jf.at("categories").get<std::vector<std::string>>();
    } else {
      throw Error(ErrorCode::Parse, "field kind must be numeric|categorical, got '" + kind + "'");
    }
    f.units = jf.value("units", "");
    f.missing_indicator = jf.value("missing_indicator", false);
    schema.fields.push_back(std::move(f));
  }
  for (const auto& c : j.at("cohorts")) schema.cohorts.emplace_back(c.get<std::string>());
  return schema;
}

}  // namespace cohort_agent
