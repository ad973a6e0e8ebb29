#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>

#include "cohort_agent/agent.hpp"

namespace cohort_agent {

struct HttpResponse {
  int status = 200;
  Json body;
};

/// HTTP front end for the agent. State is swapped in once with load() and
/// read without locks afterwards.
class PredictionService {
 public:
  /// `feature_store` backs requests that use feature_ref instead of inline
  /// features; ref i is map i of the dataset's feature file.
  void load(std::shared_ptr<const Agent> agent, std::vector<FeatureMap> feature_store = {}) {
    auto s = std::make_shared<const State>(State{std::move(agent), std::move(feature_store)});
    std::atomic_store(&state_, std::move(s));
  }

  [[nodiscard]] HttpResponse handle_health() const {
    const auto s = std::atomic_load(&state_);
    if (!s) return {503, Json{{"status", "loading"}}};
    const auto& a = *s->agent;
    return {200, Json{{"status", "ok"},
                      {"index_size", a.retrieval().index.size()},
                      {"dimension", a.retrieval().index.dimension()},
                      {"metric", to_string(a.retrieval().index.metric())},
                      {"k", a.retrieval().k},
                      {"models", a.registry().size()},
                      {"backend", to_string(a.backend_kind())}}};
  }

  /// Request: metadata object; exactly one of "features" (5x128 array) or
  /// "feature_ref"; optional patient_id, timepoints, k, and a ground_truth
  /// object {cohort, label} consumed only by simulated stub models.
  [[nodiscard]] HttpResponse handle_predict(const std::string& body) const {
    const auto s = std::atomic_load(&state_);
    if (!s) return {503, Json{{"error", "service not ready"}}};
    auto bad = [](const std::string& msg) { return HttpResponse{400, Json{{"error", msg}}}; };

    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::exception& e) {
      return bad(std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object()) return bad("request must be a JSON object");

    PatientRecord record;
    std::optional<std::size_t> k;
    try {
      const bool inline_features = req.contains("features");
      const bool by_ref = req.contains("feature_ref");
      if (inline_features == by_ref) return bad("exactly one of 'features' or 'feature_ref' is required");
      if (inline_features) {
        record.features = features_from_json(req["features"]);
      } else {
        const auto ref = req["feature_ref"].get<std::size_t>();
        if (ref >= s->features.size()) return bad("feature_ref " + std::to_string(ref) + " out of range");
        record.features = s->features[ref];
      }
      record.patient_id = req.value("patient_id", std::string("request"));
      record.metadata = metadata_from_json(req.value("metadata", Json::object()));
      record.timepoints = req.value("timepoints", 1);
      if (req.contains("ground_truth")) {
        const auto& gt = req["ground_truth"];
        if (gt.contains("cohort")) record.cohort = CohortId(gt["cohort"].get<std::string>());
        record.label = gt.value("label", 0);
      }
      if (req.contains("k")) {
        const auto kv = req["k"].get<long long>();
        if (kv < 1) return bad("k must be >= 1");
        k = static_cast<std::size_t>(kv);
      }
    } catch (const Json::exception& e) {
      return bad(std::string("bad field: ") + e.what());
    } catch (const Error& e) {
      return bad(e.what());
    }

    // Validate with the cohort check satisfied when no ground truth is given.
    auto schema = s->agent->schema();
    const bool probe_cohort = record.cohort.empty();
    PatientRecord probe = record;
    if (probe_cohort && !schema.cohorts.empty()) probe.cohort = schema.cohorts.front();
    const auto v = validate_record(probe, schema);
    if (!v.ok()) {
      Json issues = Json::array();
      for (const auto& i : v.issues) issues.push_back(std::string(to_string(i.code)) + ": " + i.detail);
      return {400, Json{{"error", std::string(to_string(v.issues.front().code))}, {"issues", issues}}};
    }

    try {
      const auto result = s->agent->run(record, k);
      Json out = prediction_to_json(record.patient_id, result, s->agent->config().split.seed);
      out["timing_ms"] = result.elapsed_ms;
      return {200, out};
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::NotApplicable:
        case ErrorCode::NoApplicableModel:
          return {422, Json{{"error", e.what()}}};
        case ErrorCode::BackendUnavailable:
        case ErrorCode::AdapterUnavailable:
          return {503, Json{{"error", e.what()}}};
        default:
          return {400, Json{{"error", e.what()}}};
      }
    }
  }

  /// Registers POST /v1/predict and GET /v1/health.
  void mount(httplib::Server& server, std::size_t max_body_bytes = 1 << 20) const {
    server.set_payload_max_length(max_body_bytes);
    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      const auto r = handle_health();
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    });
    server.Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = handle_predict(req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    });
  }

 private:
  struct State {
    std::shared_ptr<const Agent> agent;
    std::vector<FeatureMap> features;
  };
  std::shared_ptr<const State> state_;
};

}  // namespace cohort_agent
