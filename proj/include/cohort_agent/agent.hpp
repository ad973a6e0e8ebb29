#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cohort_agent/eval.hpp"
#include "cohort_agent/io.hpp"

namespace cohort_agent {

struct AgentConfig {
  FusionConfig fusion;
  Metric metric = Metric::Cosine;
  std::size_t k = kDefaultTopK;
  SplitSpec split;
  SelectOptions select;
};

struct AgentResult {
  RiskPrediction prediction;
  CohortAssignment assignment;
  SelectionDecision decision;
  double model_wall_time = 0.0;  // seconds, as reported by the model
  double elapsed_ms = 0.0;       // measured end to end
};

/// The two-stage pipeline over immutable shared state: retrieve the cohort
/// by majority vote, select a model for it, score the patient.
class Agent {
 public:
  Agent(MetadataSchema schema, ModelRegistry registry, PerformanceTable table, RetrievalSetup retrieval,
        AgentConfig config, std::shared_ptr<CompletionBackend> backend = nullptr,
        std::shared_ptr<AdapterTransport> transport = nullptr)
      : schema_(std::move(schema)),
        registry_(std::move(registry)),
        table_(std::move(table)),
        retrieval_(std::move(retrieval)),
        config_(std::move(config)),
        backend_(std::move(backend)),
        transport_(std::move(transport)) {}

  /// A query whose cohort is empty is scored with the retrieved cohort
  /// standing in for the true one (relevant to stub models only).
  [[nodiscard]] AgentResult run(const PatientRecord& query, std::optional<std::size_t> k = std::nullopt) const {
    const auto start = std::chrono::steady_clock::now();
    AgentResult out;
    const FusedVector x = fuse(query, retrieval_.stats, retrieval_.fusion);
    out.assignment = majority_vote(retrieval_.index.search(x, k.value_or(retrieval_.k)));
    out.decision = select_model(backend_.get(), query, out.assignment.cohort, table_, registry_, config_.select);

    PatientRecord scored = query;
    if (scored.cohort.empty()) scored.cohort = out.assignment.cohort;
    const auto pred = predict(registry_.get(out.decision.model), scored, transport_.get());

    out.prediction.probability = pred.probability;
    out.prediction.model = out.decision.model;
    out.prediction.cohort = out.assignment.cohort;
    for (const auto& n : out.assignment.neighbors) out.prediction.neighbor_ids.push_back(n.patient_id);
    out.model_wall_time = pred.wall_time;
    out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  [[nodiscard]] const MetadataSchema& schema() const noexcept { return schema_; }
  [[nodiscard]] const ModelRegistry& registry() const noexcept { return registry_; }
  [[nodiscard]] const PerformanceTable& table() const noexcept { return table_; }
  [[nodiscard]] const RetrievalSetup& retrieval() const noexcept { return retrieval_; }
  [[nodiscard]] const AgentConfig& config() const noexcept { return config_; }
  [[nodiscard]] Backend backend_kind() const noexcept { return backend_ ? Backend::Llm : Backend::Rule; }

 private:
  MetadataSchema schema_;
  ModelRegistry registry_;
  PerformanceTable table_;
  RetrievalSetup retrieval_;
  AgentConfig config_;
  std::shared_ptr<CompletionBackend> backend_;
  std::shared_ptr<AdapterTransport> transport_;
};

/// Machine-readable prediction line. Probability is emitted at full
/// precision so output from different front ends can be compared exactly.
/// `seed` is the split seed the index was built with.
inline Json prediction_to_json(const std::string& patient_id, const AgentResult& r, std::uint64_t seed) {
  Json votes = Json::object();
  for (const auto& [c, n] : r.assignment.vote_counts) votes[c.str()] = n;
  return Json{{"patient_id", patient_id},
              {"risk", r.prediction.probability},
              {"model", r.prediction.model.str()},
              {"cohort", r.prediction.cohort.str()},
              {"neighbor_ids", r.prediction.neighbor_ids},
              {"votes", votes},
              {"tie_broken", r.assignment.tie_broken},
              {"backend", to_string(r.decision.backend)},
              {"fallback", r.decision.fallback},
              {"seed", seed}};
}

// ---------------------------------------------------------------- workspace

/// Standard file names inside a data directory.
struct WorkspacePaths {
  std::filesystem::path dir;

  [[nodiscard]] std::string schema() const { return (dir / "schema.json").string(); }
  [[nodiscard]] std::string records() const { return (dir / "records.jsonl").string(); }
  [[nodiscard]] std::string features() const { return (dir / "features.cafv").string(); }
  [[nodiscard]] std::string table() const { return (dir / "performance.csv").string(); }
  [[nodiscard]] std::string models() const { return (dir / "models.json").string(); }
  [[nodiscard]] std::string index() const { return (dir / "index.cavi").string(); }
  [[nodiscard]] std::string encoding() const { return (dir / "encoding.json").string(); }
  [[nodiscard]] std::string run() const { return (dir / "run.json").string(); }
};

struct Dataset {
  MetadataSchema schema;
  std::vector<PatientRecord> records;
  ModelRegistry registry;
  PerformanceTable table;

  [[nodiscard]] const PatientRecord& find(const std::string& patient_id) const {
    for (const auto& r : records)
      if (r.patient_id == patient_id) return r;
    throw Error(ErrorCode::UnknownPatient, patient_id);
  }
};

inline Dataset load_dataset(const WorkspacePaths& paths, const io::IngestOptions& options = {}) {
  Dataset d;
  d.schema = io::read_schema(paths.schema());
  d.records = io::ingest(paths.records(), paths.features(), d.schema, options).records;
  d.registry = io::read_registry(paths.models());
  d.table = io::read_table(paths.table());
  return d;
}

inline Json config_to_json(const AgentConfig& c) {
  return Json{{"alpha", c.fusion.feature_weight},
              {"aggregation", to_string(c.fusion.aggregation)},
              {"metric", to_string(c.metric)},
              {"k", c.k},
              {"seed", c.split.seed},
              {"holdout_fraction", c.split.holdout_fraction}};
}

inline AgentConfig config_from_json(const Json& j) {
  AgentConfig c;
  c.fusion.feature_weight = j.at("alpha").get<double>();
  c.fusion.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  c.metric = parse_metric(j.at("metric").get<std::string>());
  c.k = j.at("k").get<std::size_t>();
  c.split.seed = j.at("seed").get<std::uint64_t>();
  c.split.holdout_fraction = j.at("holdout_fraction").get<double>();
  return c;
}

/// Splits the dataset, fits encoding on the database part and indexes it.
inline std::pair<RetrievalSetup, Split> build_retrieval(const Dataset& d, const AgentConfig& config) {
  auto parts = split(d.records, config.split);
  auto setup = prepare_retrieval(parts.database, d.schema, config.fusion, config.metric, config.k);
  return {std::move(setup), std::move(parts)};
}

inline void save_retrieval(const WorkspacePaths& paths, const RetrievalSetup& setup, const AgentConfig& config) {
  setup.index.save(paths.index());
  io::write_text(paths.encoding(), io::stats_to_json(setup.stats).dump(2) + "\n");
  io::write_text(paths.run(), config_to_json(config).dump(2) + "\n");
}

/// Loads a previously built index together with the configuration it was
/// built with.
inline std::pair<RetrievalSetup, AgentConfig> load_retrieval(const WorkspacePaths& paths) {
  auto config = config_from_json(io::read_json(paths.run()));
  RetrievalSetup setup{io::stats_from_json(io::read_json(paths.encoding())), config.fusion,
                       VectorIndex::load(paths.index()), config.k};
  if (setup.index.metric() != config.metric)
    throw Error(ErrorCode::CorruptHeader, "index metric disagrees with " + paths.run());
  return {std::move(setup), config};
}

}  // namespace cohort_agent
