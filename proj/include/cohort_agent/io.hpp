#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cohort_agent/binary_io.hpp"
#include "cohort_agent/fusion.hpp"
#include "cohort_agent/json_codec.hpp"
#include "cohort_agent/policy.hpp"

// On-disk formats: records (JSON lines), features (CAFV binary), schema,
// model registry, performance table (CSV) and encoding statistics.
namespace cohort_agent::io {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

inline Json read_json(const std::string& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- features

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// "CAFV", version u32, count u32, rows u32 (5), cols u32 (128), then
/// count x rows x cols f32 row-major.
inline std::vector<char> encode_features(std::span<const FeatureMap> maps) {
  binary::Writer w;
  w.bytes("CAFV");
  w.u32(kFeatureFormatVersion);
  w.u32(static_cast<std::uint32_t>(maps.size()));
  w.u32(static_cast<std::uint32_t>(kFeatureRows));
  w.u32(static_cast<std::uint32_t>(kFeatureCols));
  for (const auto& m : maps) {
    if (!m.has_standard_shape()) throw Error(ErrorCode::ShapeMismatch, "feature file holds 5x128 maps only");
    for (float v : m.values) w.f32(v);
  }
  return w.data();
}

inline void write_features(const std::string& path, std::span<const FeatureMap> maps) {
  const auto bytes = encode_features(maps);
  write_text(path, std::string(bytes.begin(), bytes.end()));
}

inline std::vector<FeatureMap> decode_features(binary::Reader r) {
  if (r.remaining() < 4 || r.bytes(4) != "CAFV") throw Error(ErrorCode::CorruptHeader, "feature file magic");
  const auto version = r.u32();
  if (version != kFeatureFormatVersion)
    throw Error(ErrorCode::VersionMismatch, "feature format version " + std::to_string(version));
  const std::size_t count = r.u32();
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  if (rows != kFeatureRows || cols != kFeatureCols)
    throw Error(ErrorCode::ShapeMismatch, "feature file declares " + std::to_string(rows) + "x" + std::to_string(cols));
  if (r.remaining() != count * rows * cols * 4)
    throw Error(ErrorCode::Truncated, "feature payload size does not match count " + std::to_string(count));
  std::vector<FeatureMap> out(count);
  for (auto& m : out)
    for (auto& v : m.values) v = r.f32();
  return out;
}

inline std::vector<FeatureMap> read_features(const std::string& path) {
  return decode_features(binary::Reader::from_file(path));
}

// ---------------------------------------------------------------- records

inline Json record_line(const PatientRecord& r, std::size_t feature_ref) {
  Json j = record_to_json(r, false);
  j["feature_ref"] = feature_ref;
  return j;
}

/// Writes records.jsonl and the companion feature file; record i refers to
/// feature map i.
inline void write_dataset(const std::string& records_path, const std::string& features_path,
                          std::span<const PatientRecord> records) {
  std::ostringstream lines;
  std::vector<FeatureMap> maps;
  maps.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    lines << record_line(records[i], i).dump() << "\n";
    maps.push_back(records[i].features);
  }
  write_text(records_path, lines.str());
  write_features(features_path, maps);
}

struct IngestOptions {
  bool lenient = false;  // tolerate unknown top-level fields
};

struct IngestReport {
  std::vector<PatientRecord> records;
  std::size_t lines = 0;
  std::map<CohortId, std::size_t> per_cohort;
};

/// Parses, resolves feature_refs and validates every record. Errors name
/// the line number or patient id.
inline IngestReport ingest(const std::string& records_path, const std::string& features_path,
                           const MetadataSchema& schema, const IngestOptions& options = {}) {
  const auto features = read_features(features_path);
  std::ifstream in(records_path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + records_path + "'");

  static const std::set<std::string> known = {"patient_id", "cohort", "metadata", "label", "timepoints", "feature_ref"};
  IngestReport rep;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = records_path + ":" + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::Parse, where + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::Parse, where + ": expected an object");
    if (!options.lenient) {
      for (const auto& [key, v] : j.items())
        if (!known.contains(key)) throw Error(ErrorCode::Parse, where + ": unknown field '" + key + "'");
    }
    PatientRecord r;
    std::size_t ref = 0;
    try {
      r.patient_id = j.at("patient_id").get<std::string>();
      r.cohort = CohortId(j.at("cohort").get<std::string>());
      r.metadata = metadata_from_json(j.at("metadata"));
      r.label = j.at("label").get<int>();
      r.timepoints = j.value("timepoints", 1);
      ref = j.at("feature_ref").get<std::size_t>();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::Parse, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::Parse, where + ": " + e.what());
    }
    if (ref >= features.size()) {
      throw Error(ErrorCode::InvalidArgument, "patient " + r.patient_id + ": feature_ref " + std::to_string(ref) +
                                                  " beyond feature file (" + std::to_string(features.size()) +
                                                  " maps)");
    }
    if (!seen.insert(r.patient_id).second) throw Error(ErrorCode::DuplicateId, "patient_id " + r.patient_id);
    r.features = features[ref];
    const auto v = validate_record(r, schema);
    if (!v.ok()) {
      std::string msg = "patient " + r.patient_id + ":";
      for (const auto& issue : v.issues) msg += " [" + std::string(to_string(issue.code)) + ": " + issue.detail + "]";
      throw Error(v.issues.front().code, msg);
    }
    ++rep.per_cohort[r.cohort];
    rep.records.push_back(std::move(r));
    ++rep.lines;
  }
  return rep;
}

// ---------------------------------------------------------------- schema

inline MetadataSchema read_schema(const std::string& path) {
  try {
    return schema_from_json(read_json(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

inline void write_schema(const std::string& path, const MetadataSchema& schema) {
  write_text(path, schema_to_json(schema).dump(2) + "\n");
}

// ---------------------------------------------------------------- models

inline LogisticParams logistic_from_json(const Json& j) {
  LogisticParams p;
  p.intercept = j.at("intercept").get<double>();
  p.source = j.value("source", "");
  for (const auto& t : j.at("coefficients")) {
    LogisticTerm term;
    term.covariate = t.at("covariate").get<std::string>();
    term.beta = t.at("beta").get<double>();
    term.scale = t.value("scale", 1.0);
    term.power = t.value("power", 1.0);
    term.center = t.value("center", 0.0);
    p.terms.push_back(std::move(term));
  }
  return p;
}

inline Json logistic_to_json(const LogisticParams& p) {
  Json terms = Json::array();
  for (const auto& t : p.terms) {
    Json jt{{"covariate", t.covariate}, {"beta", t.beta}};
    if (t.scale != 1.0) jt["scale"] = t.scale;
    if (t.power != 1.0) jt["power"] = t.power;
    if (t.center != 0.0) jt["center"] = t.center;
    terms.push_back(std::move(jt));
  }
  Json j{{"intercept", p.intercept}, {"coefficients", terms}};
  if (!p.source.empty()) j["source"] = p.source;
  return j;
}

inline ModelSpec model_from_json(const Json& j) {
  ModelSpec s;
  s.id = ModelId(j.at("id").get<std::string>());
  const auto kind = j.at("kind").get<std::string>();
  s.cost_per_patient = j.value("cost_per_patient_s", 0.0);
  if (j.contains("requirements")) {
    const auto& r = j["requirements"];
    s.requirements.min_timepoints = r.value("min_timepoints", 1);
    s.requirements.required_fields = r.value("required_fields", std::vector<std::string>{});
  }
  if (kind == "logistic") {
    s.kind = ModelKind::Logistic;
    s.logistic = logistic_from_json(j.at("logistic"));
  } else if (kind == "binormal_stub") {
    s.kind = ModelKind::BinormalStub;
    const auto& b = j.at("binormal");
    s.binormal.seed = b.value("seed", std::uint64_t{0});
    const Json targets = b.value("target_auc", Json::object());
    for (const auto& [cohort, a] : targets.items())
      s.binormal.target_auc[CohortId(cohort)] = a.get<double>();
    if (b.contains("default_auc") && !b["default_auc"].is_null()) s.binormal.default_auc = b["default_auc"].get<double>();
  } else if (kind == "adapter") {
    s.kind = ModelKind::Adapter;
    const auto& a = j.at("adapter");
    s.adapter.url = a.at("url").get<std::string>();
    s.adapter.timeout_ms = a.value("timeout_ms", 2000);
    s.adapter.retries = a.value("retries", 1);
  } else {
    throw Error(ErrorCode::Parse, "model kind must be logistic|binormal_stub|adapter, got '" + kind + "'");
  }
  return s;
}

inline Json model_to_json(const ModelSpec& s) {
  Json j{{"id", s.id.str()}, {"kind", to_string(s.kind)}, {"cost_per_patient_s", s.cost_per_patient}};
  j["requirements"] = {{"min_timepoints", s.requirements.min_timepoints},
                       {"required_fields", s.requirements.required_fields}};
  switch (s.kind) {
    case ModelKind::Logistic:
      j["logistic"] = logistic_to_json(s.logistic);
      break;
    case ModelKind::BinormalStub: {
      Json targets = Json::object();
      for (const auto& [c, a] : s.binormal.target_auc) targets[c.str()] = a;
      j["binormal"] = {{"seed", s.binormal.seed}, {"target_auc", targets}};
      if (s.binormal.default_auc) j["binormal"]["default_auc"] = *s.binormal.default_auc;
      break;
    }
    case ModelKind::Adapter:
      j["adapter"] = {{"url", s.adapter.url}, {"timeout_ms", s.adapter.timeout_ms}, {"retries", s.adapter.retries}};
      break;
  }
  return j;
}

inline ModelRegistry read_registry(const std::string& path) {
  const auto j = read_json(path);
  ModelRegistry reg;
  try {
    for (const auto& m : j.at("models")) reg.add(model_from_json(m));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
  return reg;
}

inline void write_registry(const std::string& path, const ModelRegistry& reg) {
  Json models = Json::array();
  for (const auto& s : reg.specs()) models.push_back(model_to_json(s));
  write_text(path, Json{{"models", models}}.dump(2) + "\n");
}

/// A standalone logistic model file (see config/mayo.json).
inline ModelSpec read_logistic_model(const std::string& path) {
  const auto j = read_json(path);
  try {
    ModelSpec s = model_from_json(j);
    if (s.kind != ModelKind::Logistic) throw Error(ErrorCode::Parse, path + ": not a logistic model");
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- table

/// CSV with header "cohort,model,auc,applicable".
inline std::string table_to_csv(const PerformanceTable& table) {
  std::ostringstream out;
  out << "cohort,model,auc,applicable\n";
  for (const auto& [key, e] : table.entries()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", e.auc);
    out << key.first.str() << "," << key.second.str() << "," << buf << "," << (e.applicable ? "true" : "false") << "\n";
  }
  return out.str();
}

inline PerformanceTable table_from_csv(const std::string& text, const std::string& name = "<table>") {
  PerformanceTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && line.rfind("cohort,", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    const std::string where = name + ":" + std::to_string(line_no);
    if (cells.size() != 4) throw Error(ErrorCode::Parse, where + ": expected 4 columns");
    double auc = 0.0;
    try {
      std::size_t used = 0;
      auc = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument(cells[2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Parse, where + ": bad AUC '" + cells[2] + "'");
    }
    bool applicable = true;
    if (cells[3] == "true" || cells[3] == "1") {
      applicable = true;
    } else if (cells[3] == "false" || cells[3] == "0") {
      applicable = false;
    } else {
      throw Error(ErrorCode::Parse, where + ": applicable must be true|false");
    }
    table.set(CohortId(cells[0]), ModelId(cells[1]), {auc, applicable});
  }
  table.check();
  return table;
}

inline PerformanceTable read_table(const std::string& path) { return table_from_csv(read_text(path), path); }
inline void write_table(const std::string& path, const PerformanceTable& t) { write_text(path, table_to_csv(t)); }

// ---------------------------------------------------------------- encoding

inline Json stats_to_json(const EncodingStats& stats) {
  Json fields = Json::array();
  for (const auto& f : stats.fields) {
    Json jf{{"name", f.name}, {"missing_indicator", f.missing_indicator}};
    if (f.kind == FieldKind::Numeric) {
      jf["kind"] = "numeric";
      jf["mean"] = f.mean;
      jf["sd"] = f.sd;
      jf["constant"] = f.constant;
    } else {
      jf["kind"] = "categorical";
      jf["categories"] = f.categories;
    }
    fields.push_back(std::move(jf));
  }
  return Json{{"fields", fields}};
}

inline EncodingStats stats_from_json(const Json& j) {
  EncodingStats stats;
  for (const auto& jf : j.at("fields")) {
    EncodingStats::Field f;
    f.name = jf.at("name").get<std::string>();
    f.missing_indicator = jf.value("missing_indicator", false);
    if (jf.at("kind").get<std::string>() == "numeric") {
      f.kind = FieldKind::Numeric;
      f.mean = jf.at("mean").get<double>();
      f.sd = jf.at("sd").get<double>();
      f.constant = jf.value("constant", false);
    } else {
      f.kind = FieldKind::Categorical;
      f.categories = jf.at("categories").get<std::vector<std::string>>();
    }
    stats.fields.push_back(std::move(f));
  }
  return stats;
}

}  // namespace cohort_agent::io
