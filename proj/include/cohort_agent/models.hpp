#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "cohort_agent/json_codec.hpp"

namespace cohort_agent {

enum class ModelKind { Logistic, Adapter, BinormalStub };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Adapter: return "adapter";
    case ModelKind::BinormalStub: return "binormal_stub";
  }
  return "?";
}

struct Requirements {
  int min_timepoints = 1;
  std::vector<std::string> required_fields;  // must be present and non-missing
};

/// One additive term: beta * ((value / scale)^power - center). The covariate
/// is a numeric metadata field, or "field=category" for a 0/1 indicator.
struct LogisticTerm {
  std::string covariate;
  double beta = 0.0;
  double scale = 1.0;
  double power = 1.0;
  double center = 0.0;
};

struct LogisticParams {
  double intercept = 0.0;
  std::vector<LogisticTerm> terms;
  std::string source;  // citation for transcribed coefficients
};

struct BinormalParams {
  std::uint64_t seed = 0;
  std::map<CohortId, double> target_auc;
  std::optional<double> default_auc;
};

struct AdapterParams {
  std::string url;  // http://host:port/path
  int timeout_ms = 2000;
  int retries = 1;
};

struct ModelSpec {
  ModelId id;
  ModelKind kind = ModelKind::BinormalStub;
  Requirements requirements;
  double cost_per_patient = 0.0;  // seconds; reported as wall time by stubs
  LogisticParams logistic;
  BinormalParams binormal;
  AdapterParams adapter;
};

struct PredictionOutput {
  double probability = 0.0;
  double wall_time = 0.0;  // seconds
};

inline double sigmoid(double t) noexcept {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------- logistic

inline double logistic_risk(const LogisticParams& params, const std::map<std::string, double>& covariates) {
  double eta = params.intercept;
  for (const auto& term : params.terms) {
    auto it = covariates.find(term.covariate);
    if (it == covariates.end()) throw Error(ErrorCode::MissingCovariate, term.covariate);
    double v = it->second / term.scale;
    if (term.power != 1.0) v = std::pow(v, term.power);
    eta += term.beta * (v - term.center);
  }
  if (!std::isfinite(eta)) throw Error(ErrorCode::NonFinite, "linear predictor");
  return sigmoid(eta);
}

/// Resolves the covariates a logistic model names from record metadata.
/// Missing or absent fields are left out so logistic_risk reports them.
inline std::map<std::string, double> logistic_covariates(const LogisticParams& params, const PatientRecord& record) {
  std::map<std::string, double> out;
  for (const auto& term : params.terms) {
    const auto eq = term.covariate.find('=');
    const std::string field = eq == std::string::npos ? term.covariate : term.covariate.substr(0, eq);
    auto it = record.metadata.find(field);
    if (it == record.metadata.end() || is_missing(it->second)) continue;
    if (eq != std::string::npos) {
      if (!std::holds_alternative<std::string>(it->second)) continue;
      out[term.covariate] = std::get<std::string>(it->second) == term.covariate.substr(eq + 1) ? 1.0 : 0.0;
    } else if (std::holds_alternative<double>(it->second)) {
      out[term.covariate] = std::get<double>(it->second);
    }
  }
  return out;
}

// ---------------------------------------------------------------- binormal

/// Positive-class mean giving AUC = Phi(mu / sqrt 2) against N(0,1) negatives.
inline double binormal_mean(double target_auc) {
  if (!(target_auc > 0.0 && target_auc < 1.0))
    throw Error(ErrorCode::InvalidArgument, "target AUC must lie in (0,1)");
  return std::sqrt(2.0) * boost::math::quantile(boost::math::normal_distribution<double>(), target_auc);
}

/// Sequential draws from one seeded stream: negatives ~ N(0,1), positives
/// ~ N(mu,1), mapped through the logistic function.
inline std::vector<double> binormal_scores(double target_auc, std::span<const int> labels, std::uint64_t seed) {
  const double mu = binormal_mean(target_auc);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out;
  out.reserve(labels.size());
  for (int label : labels) out.push_back(sigmoid(normal(rng) + (label == 1 ? mu : 0.0)));
  return out;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Keyed variant used by stub models: the draw depends only on (seed,
/// model, patient), so a patient gets the same score from a model no matter
/// which strategy routed it there.
inline double binormal_score(double target_auc, int label, std::uint64_t seed, const ModelId& model,
                             const std::string& patient_id) {
  const double mu = binormal_mean(target_auc);
  const std::uint64_t key = detail::splitmix64(seed ^ detail::splitmix64(detail::fnv1a(model.str())) ^
                                               detail::splitmix64(detail::fnv1a(patient_id) + 1));
  std::mt19937_64 rng(key);
  std::normal_distribution<double> normal(0.0, 1.0);
  return sigmoid(normal(rng) + (label == 1 ? mu : 0.0));
}

// ---------------------------------------------------------------- predict

/// Transport for adapter models. Implementations POST the body to the
/// adapter endpoint and return the response body, or throw
/// Error(AdapterUnavailable).
class AdapterTransport {
 public:
  virtual ~AdapterTransport() = default;
  virtual std::string post(const AdapterParams& endpoint, const std::string& body) = 0;
};

/// Empty when the record satisfies the model's input requirements, otherwise
/// the reason it does not.
inline std::optional<std::string> requirement_violation(const ModelSpec& spec, const PatientRecord& record) {
  if (record.timepoints < spec.requirements.min_timepoints) {
    return spec.id.str() + " needs " + std::to_string(spec.requirements.min_timepoints) + " timepoints, patient has " +
           std::to_string(record.timepoints);
  }
  for (const auto& field : spec.requirements.required_fields) {
    auto it = record.metadata.find(field);
    if (it == record.metadata.end() || is_missing(it->second))
      return spec.id.str() + " needs metadata field '" + field + "'";
  }
  return std::nullopt;
}

inline PredictionOutput predict(const ModelSpec& spec, const PatientRecord& record,
                                AdapterTransport* transport = nullptr) {
  if (auto why = requirement_violation(spec, record)) throw Error(ErrorCode::NotApplicable, *why);

  switch (spec.kind) {
    case ModelKind::Logistic: {
      const auto start = std::chrono::steady_clock::now();
      double p = 0.0;
      try {
        p = logistic_risk(spec.logistic, logistic_covariates(spec.logistic, record));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::MissingCovariate) throw Error(ErrorCode::NotApplicable, e.what());
        throw;
      }
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      return {p, elapsed.count()};
    }
    case ModelKind::BinormalStub: {
      double target = 0.0;
      if (auto it = spec.binormal.target_auc.find(record.cohort); it != spec.binormal.target_auc.end()) {
        target = it->second;
      } else if (spec.binormal.default_auc) {
        target = *spec.binormal.default_auc;
      } else {
        throw Error(ErrorCode::NotApplicable, spec.id.str() + " has no profile for cohort " + record.cohort.str());
      }
      return {binormal_score(target, record.label, spec.binormal.seed, spec.id, record.patient_id),
              spec.cost_per_patient};
    }
    case ModelKind::Adapter: {
      if (transport == nullptr) throw Error(ErrorCode::AdapterUnavailable, "no transport configured");
      const auto start = std::chrono::steady_clock::now();
      const std::string reply = transport->post(spec.adapter, record_to_json(record).dump());
      Json j;
      try {
        j = Json::parse(reply);
      } catch (const Json::exception& e) {
        throw Error(ErrorCode::AdapterUnavailable, std::string("unparseable reply: ") + e.what());
      }
      if (!j.is_object() || !j.contains("probability") || !j["probability"].is_number())
        throw Error(ErrorCode::AdapterUnavailable, "reply lacks numeric 'probability'");
      const double p = j["probability"].get<double>();
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::AdapterUnavailable, "probability outside [0,1]");
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      return {p, elapsed.count()};
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model kind");
}

// ---------------------------------------------------------------- registry

class ModelRegistry {
 public:
  void add(ModelSpec spec) {
    if (spec.id.empty()) throw Error(ErrorCode::InvalidArgument, "model id must be non-empty");
    if (spec.requirements.min_timepoints < 1)
      throw Error(ErrorCode::InvalidArgument, spec.id.str() + ": min_timepoints must be >= 1");
    if (by_id_.contains(spec.id)) throw Error(ErrorCode::DuplicateId, spec.id.str());
    by_id_.emplace(spec.id, specs_.size());
    specs_.push_back(std::move(spec));
  }

  [[nodiscard]] const ModelSpec& get(const ModelId& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw Error(ErrorCode::UnknownModel, id.str());
    return specs_[it->second];
  }

  [[nodiscard]] bool contains(const ModelId& id) const { return by_id_.contains(id); }
  [[nodiscard]] std::size_t size() const noexcept { return specs_.size(); }
  [[nodiscard]] const std::vector<ModelSpec>& specs() const noexcept { return specs_; }

 private:
  std::vector<ModelSpec> specs_;
  std::unordered_map<ModelId, std::size_t> by_id_;
};

}  // namespace cohort_agent
