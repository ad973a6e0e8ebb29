#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cohort_agent/fusion.hpp"
#include "cohort_agent/models.hpp"

namespace cohort_agent {

struct PerformanceEntry {
  double auc = 0.0;
  bool applicable = true;
};

/// Historical (cohort, model) AUCs that ground model selection.
class PerformanceTable {
 public:
  void set(const CohortId& cohort, const ModelId& model, PerformanceEntry entry) {
    if (!(entry.auc >= 0.0 && entry.auc <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "AUC for " + cohort.str() + "/" + model.str() + " outside [0,1]");
    entries_[{cohort, model}] = entry;
  }

  [[nodiscard]] std::optional<PerformanceEntry> get(const CohortId& cohort, const ModelId& model) const {
    auto it = entries_.find({cohort, model});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] bool has_cohort(const CohortId& cohort) const {
    auto it = entries_.lower_bound({cohort, ModelId()});
    return it != entries_.end() && it->first.first == cohort;
  }

  [[nodiscard]] std::vector<CohortId> cohorts() const {
    std::vector<CohortId> out;
    for (const auto& [key, e] : entries_)
      if (out.empty() || out.back() != key.first) out.push_back(key.first);
    return out;
  }

  [[nodiscard]] std::vector<ModelId> models() const {
    std::vector<ModelId> out;
    for (const auto& [key, e] : entries_) out.push_back(key.second);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Rows for one cohort, ordered by model id.
  [[nodiscard]] std::vector<std::pair<ModelId, PerformanceEntry>> rows(const CohortId& cohort) const {
    std::vector<std::pair<ModelId, PerformanceEntry>> out;
    for (auto it = entries_.lower_bound({cohort, ModelId()}); it != entries_.end() && it->first.first == cohort; ++it)
      out.emplace_back(it->first.second, it->second);
    return out;
  }

  [[nodiscard]] const std::map<std::pair<CohortId, ModelId>, PerformanceEntry>& entries() const noexcept {
    return entries_;
  }

  /// Every cohort needs at least one applicable model.
  void check() const {
    for (const auto& c : cohorts()) {
      const auto r = rows(c);
      if (std::none_of(r.begin(), r.end(), [](const auto& row) { return row.second.applicable; }))
        throw Error(ErrorCode::NoApplicableModel, "cohort " + c.str() + " has no applicable model");
    }
  }

 private:
  std::map<std::pair<CohortId, ModelId>, PerformanceEntry> entries_;
};

enum class Backend { Rule, Llm };

inline std::string to_string(Backend b) { return b == Backend::Rule ? "rule" : "llm"; }

struct SelectionDecision {
  ModelId model;
  CohortId cohort;
  Backend backend = Backend::Rule;
  std::string rationale;
  bool fallback = false;
};

namespace detail {

inline std::string fmt_auc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace detail

/// Models of the cohort that are marked applicable, registered, and whose
/// input requirements the record meets; best first by (AUC desc, per-patient
/// cost asc, id asc).
inline std::vector<ModelId> ranked_models(const PerformanceTable& table, const CohortId& cohort,
                                          const PatientRecord& record, const ModelRegistry& registry) {
  struct Candidate {
    ModelId id;
    double auc;
    double cost;
  };
  std::vector<Candidate> candidates;
  for (const auto& [model, entry] : table.rows(cohort)) {
    if (!entry.applicable || !registry.contains(model)) continue;
    const auto& spec = registry.get(model);
    if (requirement_violation(spec, record)) continue;
    candidates.push_back({model, entry.auc, spec.cost_per_patient});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.auc != b.auc) return a.auc > b.auc;
    if (a.cost != b.cost) return a.cost < b.cost;
    return a.id < b.id;
  });
  std::vector<ModelId> out;
  for (auto& c : candidates) out.push_back(std::move(c.id));
  return out;
}

inline SelectionDecision best_model(const PerformanceTable& table, const CohortId& cohort, const PatientRecord& record,
                                    const ModelRegistry& registry) {
  if (!table.has_cohort(cohort)) throw Error(ErrorCode::UnknownCohort, cohort.str() + " not in performance table");
  const auto ranked = ranked_models(table, cohort, record, registry);
  if (ranked.empty())
    throw Error(ErrorCode::NoApplicableModel, "no applicable model for cohort " + cohort.str() + " and patient " +
                                                  record.patient_id);
  const auto auc = table.get(cohort, ranked.front())->auc;
  return {ranked.front(), cohort, Backend::Rule,
          "historically best applicable model for " + cohort.str() + " (AUC " + detail::fmt_auc(auc) + ")", false};
}

// ---------------------------------------------------------------- LLM path

/// Text-completion endpoint. complete() throws Error(BackendUnavailable)
/// when the endpoint cannot be reached.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

inline constexpr std::size_t kDefaultPromptBudget = 4000;
inline constexpr const char* kDefaultTaskQuery =
    "Select the most suitable lung cancer risk prediction model for this patient.";

/// Deterministic prompt: task query, retrieved cohort, patient profile with
/// summarized imaging features, and the cohort's model AUC rows. Metadata
/// lines are dropped from the end when the text exceeds the budget.
inline std::string render_prompt(const std::string& query_text, const PatientRecord& record, const CohortId& cohort,
                                 const PerformanceTable& table, std::size_t budget = kDefaultPromptBudget) {
  std::ostringstream head;
  head << "### Task\n" << query_text << "\n\n### Retrieved cohort\n" << cohort.str() << "\n\n";

  std::ostringstream perf;
  perf << "### Model performance for cohort " << cohort.str() << " (historical AUC)\n";
  const auto rows = table.rows(cohort);
  if (rows.empty()) perf << "(no entries)\n";
  for (const auto& [model, entry] : rows)
    perf << "- " << model.str() << ": " << detail::fmt_auc(entry.auc) << (entry.applicable ? "" : " (not applicable)")
         << "\n";
  perf << "\n### Instructions\nReply with exactly one model name from the list above.\n";

  std::vector<std::string> profile;
  profile.push_back("### Patient profile");
  profile.push_back("timepoints: " + std::to_string(record.timepoints));
  if (record.features.has_standard_shape()) {
    std::ostringstream f;
    f << "imaging features: 5x128 map, row norms [";
    char buf[32];
    for (std::size_t r = 0; r < record.features.rows; ++r) {
      double n2 = 0.0;
      for (float v : record.features.row(r)) n2 += static_cast<double>(v) * v;
      std::snprintf(buf, sizeof buf, "%s%.3f", r == 0 ? "" : ", ", std::sqrt(n2));
      f << buf;
    }
    const auto pooled = pool_features(record.features);
    double mean = 0.0;
    for (double v : pooled) mean += v;
    mean /= static_cast<double>(pooled.size());
    double var = 0.0;
    for (double v : pooled) var += (v - mean) * (v - mean);
    std::snprintf(buf, sizeof buf, "%.3f", mean);
    f << "], pooled mean " << buf;
    std::snprintf(buf, sizeof buf, "%.3f", std::sqrt(var / static_cast<double>(pooled.size())));
    f << ", pooled sd " << buf;
    profile.push_back(f.str());
  }
  profile.push_back("metadata:");
  if (record.metadata.empty()) profile.push_back("  (none)");
  for (const auto& [name, value] : record.metadata) {
    std::string v = "missing";
    if (std::holds_alternative<double>(value)) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4g", std::get<double>(value));
      v = buf;
    } else if (std::holds_alternative<std::string>(value)) {
      v = std::get<std::string>(value);
    }
    profile.push_back("  " + name + ": " + v);
  }

  const std::string h = head.str();
  const std::string p = perf.str();
  auto join = [&](std::size_t lines) {
    std::string s = h;
    for (std::size_t i = 0; i < lines; ++i) s += profile[i] + "\n";
    return s + "\n" + p;
  };
  std::size_t lines = profile.size();
  std::string out = join(lines);
  while (out.size() > budget && lines > 1) out = join(--lines);
  if (out.size() > budget) out.resize(budget);
  return out;
}

/// Extracts a registered model name from a free-text reply. Accepts a bare
/// name (optionally quoted or with a "model:" prefix) on the first
/// non-empty line, or a JSON object with a "model" string. Case-insensitive.
inline std::optional<ModelId> parse_model_reply(const std::string& reply, const ModelRegistry& registry) {
  std::string candidate;
  try {
    const auto j = Json::parse(reply);
    if (j.is_object() && j.contains("model") && j["model"].is_string()) candidate = j["model"].get<std::string>();
  } catch (const Json::exception&) {
  }
  if (candidate.empty()) {
    std::istringstream in(reply);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        candidate = line;
        break;
      }
    }
  }
  auto lower = [](std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
  };
  auto strip = [](std::string s) {
    const std::string junk = " \t\r\n\"'`*.,;:!";
    const auto b = s.find_first_not_of(junk);
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(junk);
    return s.substr(b, e - b + 1);
  };
  candidate = strip(candidate);
  if (lower(candidate).rfind("model:", 0) == 0) candidate = strip(candidate.substr(6));
  if (candidate.empty()) return std::nullopt;
  const auto want = lower(candidate);
  for (const auto& spec : registry.specs())
    if (lower(spec.id.str()) == want) return spec.id;
  return std::nullopt;
}

struct SelectOptions {
  std::string query_text = kDefaultTaskQuery;
  std::size_t prompt_budget = kDefaultPromptBudget;
  bool fallback_on_unavailable = true;
};

/// With no backend this is best_model. With an LLM backend the reply is
/// accepted only if it names a registered model that the table marks
/// applicable for the cohort and whose requirements the record meets;
/// anything else falls back to best_model.
inline SelectionDecision select_model(CompletionBackend* backend, const PatientRecord& record, const CohortId& cohort,
                                      const PerformanceTable& table, const ModelRegistry& registry,
                                      const SelectOptions& options = {}) {
  if (backend == nullptr) return best_model(table, cohort, record, registry);

  auto fall_back = [&](const std::string& why) {
    auto d = best_model(table, cohort, record, registry);
    d.backend = Backend::Llm;
    d.fallback = true;
    d.rationale = why + "; fell back to " + d.rationale;
    return d;
  };

  const std::string prompt = render_prompt(options.query_text, record, cohort, table, options.prompt_budget);
  std::string reply;
  try {
    reply = backend->complete(prompt);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BackendUnavailable || !options.fallback_on_unavailable) throw;
    return fall_back(std::string("LLM backend unavailable (") + e.what() + ")");
  }

  const auto chosen = parse_model_reply(reply, registry);
  if (!chosen) return fall_back("LLM reply did not name a registered model");
  const auto entry = table.get(cohort, *chosen);
  if (!entry || !entry->applicable) return fall_back("LLM chose " + chosen->str() + ", not applicable for " + cohort.str());
  if (auto why = requirement_violation(registry.get(*chosen), record)) return fall_back("LLM choice rejected: " + *why);
  return {*chosen, cohort, Backend::Llm, "LLM selected " + chosen->str() + " (AUC " + detail::fmt_auc(entry->auc) + ")",
          false};
}

}  // namespace cohort_agent
