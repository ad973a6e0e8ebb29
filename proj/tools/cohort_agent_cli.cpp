// cohort-agent: generate, ingest, index, query, evaluate and serve.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cohort_agent/agent.hpp"
#include "cohort_agent/http_clients.hpp"
#include "cohort_agent/service.hpp"
#include "cohort_agent/synth.hpp"

namespace fs = std::filesystem;
using namespace cohort_agent;

namespace {

constexpr std::uint64_t kDefaultSeed = 20250101;

struct Globals {
  std::string data_dir = "data";
  std::string backend = "rule";
  std::string llm_endpoint;
  std::string llm_model = "default";
  int llm_timeout_ms = 30000;
  int llm_max_in_flight = 4;
  bool llm_no_fallback = false;
};

struct RetrievalFlags {
  std::size_t k = kDefaultTopK;
  double alpha = 0.1;
  std::string metric = "cosine";
  std::string aggregation = "pooled";
  std::uint64_t seed = kDefaultSeed;
  double holdout = 0.30;

  [[nodiscard]] AgentConfig config() const {
    AgentConfig c;
    c.k = k;
    c.fusion.feature_weight = alpha;
    c.fusion.aggregation = parse_aggregation(aggregation);
    c.fusion.check();
    c.metric = parse_metric(metric);
    c.split.seed = seed;
    c.split.holdout_fraction = holdout;
    return c;
  }
};

void add_retrieval_flags(CLI::App* cmd, RetrievalFlags& f) {
  cmd->add_option("--k", f.k, "neighbors in the vote")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "weight of imaging features in the fused vector")->capture_default_str();
  cmd->add_option("--metric", f.metric, "l2|cosine")->check(CLI::IsMember({"l2", "cosine"}))->capture_default_str();
  cmd->add_option("--aggregation", f.aggregation, "pooled|flattened")
      ->check(CLI::IsMember({"pooled", "flattened"}))
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "split seed")->capture_default_str();
  cmd->add_option("--holdout-fraction", f.holdout, "held-out share per cohort")->capture_default_str();
}

std::shared_ptr<CompletionBackend> make_backend(const Globals& g) {
  if (g.backend == "rule") return nullptr;
  if (g.llm_endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "--backend llm needs --llm-endpoint");
  CompletionEndpoint ep;
  ep.url = g.llm_endpoint;
  ep.model = g.llm_model;
  ep.timeout_ms = g.llm_timeout_ms;
  ep.max_in_flight = g.llm_max_in_flight;
  return std::make_shared<HttpCompletionBackend>(ep);
}

SelectOptions select_options(const Globals& g) {
  SelectOptions o;
  o.fallback_on_unavailable = !g.llm_no_fallback;
  return o;
}

std::string fixed(double v, int digits = 3) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t w, bool left = true) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

// ---------------------------------------------------------------- generate

struct GenerateFlags {
  std::string preset = "mimic";
  std::uint64_t seed = kDefaultSeed;
  double separation = 10.0;
  std::size_t n_per_cohort = 200;
  std::string config_dir = COHORT_AGENT_CONFIG_DIR;
};

int cmd_generate(const Globals& g, const GenerateFlags& f) {
  const auto specs = f.preset == "mimic" ? mimic_specs() : two_cohort_specs(f.separation, f.n_per_cohort);
  auto ds = generate(specs, f.seed);
  auto registry = f.preset == "mimic" ? stub_models(specs, f.seed, default_stub_costs()) : stub_models(specs, f.seed);
  for (const char* name : {"mayo.json", "brock.json"})
    registry.add(io::read_logistic_model((fs::path(f.config_dir) / name).string()));

  const WorkspacePaths paths{g.data_dir};
  fs::create_directories(paths.dir);
  io::write_schema(paths.schema(), ds.schema);
  io::write_dataset(paths.records(), paths.features(), ds.records);
  io::write_table(paths.table(), ds.table);
  io::write_registry(paths.models(), registry);

  std::map<CohortId, std::size_t> counts;
  for (const auto& r : ds.records) ++counts[r.cohort];
  std::cout << "generated " << ds.records.size() << " patients in " << counts.size() << " cohorts, "
            << registry.size() << " models (preset " << f.preset << ", seed " << f.seed << ") -> "
            << paths.dir.string() << "\n";
  for (const auto& [c, n] : counts) std::cout << "  " << pad(c.str(), 18) << n << "\n";
  return 0;
}

// ---------------------------------------------------------------- ingest

int cmd_ingest(const Globals& g, bool lenient) {
  const WorkspacePaths paths{g.data_dir};
  const auto schema = io::read_schema(paths.schema());
  const auto rep = io::ingest(paths.records(), paths.features(), schema, {lenient});
  std::size_t pos = 0;
  for (const auto& r : rep.records) pos += static_cast<std::size_t>(r.label);
  std::cout << "ingested " << rep.records.size() << " records (" << pos << " positive) from " << paths.records()
            << "\n";
  for (const auto& [c, n] : rep.per_cohort) std::cout << "  " << pad(c.str(), 18) << n << "\n";
  return 0;
}

// ---------------------------------------------------------------- build-index

int cmd_build_index(const Globals& g, const RetrievalFlags& f) {
  const WorkspacePaths paths{g.data_dir};
  const auto config = f.config();
  const auto d = load_dataset(paths);
  auto [setup, parts] = build_retrieval(d, config);
  save_retrieval(paths, setup, config);
  std::cout << "index " << paths.index() << ": " << setup.index.size() << " entries, d=" << setup.index.dimension()
            << ", metric " << to_string(setup.index.metric()) << ", holdout " << parts.holdout.size()
            << ", seed " << config.split.seed << "\n";
  return 0;
}

// ---------------------------------------------------------------- agent

struct LoadedAgent {
  Dataset dataset;
  std::shared_ptr<const Agent> agent;
};

LoadedAgent load_agent(const Globals& g) {
  const WorkspacePaths paths{g.data_dir};
  LoadedAgent out;
  out.dataset = load_dataset(paths);
  auto [setup, config] = load_retrieval(paths);
  config.select = select_options(g);
  out.agent = std::make_shared<const Agent>(out.dataset.schema, out.dataset.registry, out.dataset.table,
                                            std::move(setup), config, make_backend(g),
                                            std::make_shared<HttpAdapterTransport>());
  return out;
}

int cmd_retrieve(const Globals& g, const std::string& patient_id, std::optional<std::size_t> k) {
  const auto la = load_agent(g);
  const auto& record = la.dataset.find(patient_id);
  const auto& rs = la.agent->retrieval();
  const auto a = retrieve_cohort(rs.index, record, rs.stats, rs.fusion, k.value_or(rs.k));
  Json votes = Json::object();
  for (const auto& [c, n] : a.vote_counts) votes[c.str()] = n;
  Json neighbors = Json::array();
  for (const auto& n : a.neighbors)
    neighbors.push_back(Json{{"patient_id", n.patient_id}, {"cohort", n.cohort.str()}, {"distance", n.distance}});
  std::cout << Json{{"patient_id", patient_id},
                    {"cohort", a.cohort.str()},
                    {"votes", votes},
                    {"tie_broken", a.tie_broken},
                    {"neighbors", neighbors},
                    {"seed", la.agent->config().split.seed}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_predict(const Globals& g, const std::string& patient_id, std::optional<std::size_t> k) {
  const auto la = load_agent(g);
  const auto& record = la.dataset.find(patient_id);
  const auto result = la.agent->run(record, k);
  std::cout << prediction_to_json(patient_id, result, la.agent->config().split.seed).dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateFlags {
  RetrievalFlags retrieval;
  std::vector<std::string> strategies;
  std::size_t resamples = 1000;
  std::string out;
};

std::string render_reports(const std::vector<StrategyReport>& reports, const std::vector<Interval>& cis) {
  std::ostringstream os;
  os << pad("cohort", 18) << pad("n", 6, false);
  for (const auto& r : reports) os << "  " << pad(r.strategy, 24);
  os << "\n" << pad("", 24);
  for (std::size_t i = 0; i < reports.size(); ++i) os << "  " << pad("AUC", 8) << pad("time(s)", 16);
  os << "\n";
  for (std::size_t c = 0; c < reports.front().cohorts.size(); ++c) {
    os << pad(reports.front().cohorts[c].cohort.str(), 18) << pad(std::to_string(reports.front().cohorts[c].n), 6, false);
    for (const auto& r : reports)
      os << "  " << pad(fixed(r.cohorts[c].auc), 8) << pad(fixed(r.cohorts[c].wall_time, 2), 16);
    os << "\n";
  }
  os << pad("overall", 24);
  for (const auto& r : reports) os << "  " << pad(fixed(r.overall_auc), 8) << pad(fixed(r.total_time, 2), 16);
  os << "\n" << pad("97.5% CI", 24);
  for (const auto& ci : cis) os << "  " << pad("[" + fixed(ci.low) + ", " + fixed(ci.high) + "]", 24);
  os << "\n" << pad("pooled AUC", 24);
  for (const auto& r : reports) os << "  " << pad(fixed(r.pooled_auc), 24);
  os << "\n";
  for (const auto& r : reports)
    if (r.substitutions > 0)
      os << "* " << r.strategy << ": " << r.substitutions << " patients scored by a substitute model (preferred model not applicable)\n";
  return os.str();
}

std::string render_confusion(const ConfusionMatrix& m) {
  std::ostringstream os;
  os << pad("true \\ assigned", 22);
  for (std::size_t j = 0; j < m.cohorts.size(); ++j) os << pad("c" + std::to_string(j), 6, false);
  os << pad("acc", 8, false) << "\n";
  for (std::size_t i = 0; i < m.cohorts.size(); ++i) {
    os << pad("c" + std::to_string(i) + " " + m.cohorts[i].str(), 22);
    for (std::size_t j = 0; j < m.cohorts.size(); ++j) os << pad(std::to_string(m.counts[i][j]), 6, false);
    os << pad(fixed(m.row_accuracy(i)), 8, false) << "\n";
  }
  os << "overall " << m.correct() << " / " << m.total() << " (" << fixed(m.accuracy()) << ")\n";
  return os.str();
}

int cmd_evaluate(const Globals& g, EvaluateFlags f) {
  const WorkspacePaths paths{g.data_dir};
  auto config = f.retrieval.config();
  config.select = select_options(g);
  const auto d = load_dataset(paths);
  const auto [setup, parts] = build_retrieval(d, config);
  const auto backend = make_backend(g);
  HttpAdapterTransport transport;

  std::vector<Strategy> strategies;
  if (f.strategies.empty()) {
    for (const auto& m : d.table.models()) strategies.push_back(Strategy::single(m));
    strategies.push_back(Strategy::per_cohort_best());
    strategies.push_back(Strategy::retrieval());
  } else {
    for (const auto& s : f.strategies) strategies.push_back(Strategy::parse(s));
  }

  StrategyContext ctx{d.registry, d.table, &setup, backend.get(), &transport, config.select};
  std::vector<StrategyReport> reports;
  std::vector<Interval> cis;
  for (const auto& s : strategies) {
    reports.push_back(run_strategy(s, parts.holdout, ctx));
    cis.push_back(overall_auc_ci(reports.back(), 0.975, f.resamples, config.split.seed));
  }
  const auto cm = retrieval_confusion(setup, parts.holdout, d.schema.cohorts);

  const StrategyReport* ret = nullptr;
  const StrategyReport* orc = nullptr;
  for (const auto& r : reports) {
    if (r.strategy == "retrieval") ret = &r;
    if (r.strategy == "per_cohort_best") orc = &r;
  }
  std::optional<DeltaInterval> delta;
  if (ret && orc) delta = bootstrap_delta_auc(*ret, *orc, f.resamples, 0.95, config.split.seed);

  std::ostringstream text;
  text << "seed " << config.split.seed << "  k " << config.k << "  alpha " << config.fusion.feature_weight
       << "  metric " << to_string(config.metric) << "  aggregation " << to_string(config.fusion.aggregation)
       << "  database " << parts.database.size() << "  holdout " << parts.holdout.size() << "  backend "
       << g.backend << "\n\n";
  text << render_reports(reports, cis) << "\n";
  text << "top-1 cohort retrieval\n" << render_confusion(cm);
  if (delta) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "\ndelta AUC retrieval - per_cohort_best: mean %.4f, 95%% CI [%.4f, %.4f] (%zu cohorts, %zu resamples)\n",
                  delta->mean, delta->low, delta->high, delta->cohorts, f.resamples);
    text << buf;
  }

  std::ostringstream jsonl;
  const Json run = config_to_json(config);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    for (const auto& c : r.cohorts) {
      jsonl << Json{{"type", "cohort"},
                    {"strategy", r.strategy},
                    {"cohort", c.cohort.str()},
                    {"n", c.n},
                    {"auc", std::isnan(c.auc) ? Json(nullptr) : Json(c.auc)},
                    {"time_s", c.wall_time},
                    {"seed", config.split.seed}}
                   .dump()
            << "\n";
    }
    jsonl << Json{{"type", "overall"},
                  {"strategy", r.strategy},
                  {"auc", std::isnan(r.overall_auc) ? Json(nullptr) : Json(r.overall_auc)},
                  {"pooled_auc", std::isnan(r.pooled_auc) ? Json(nullptr) : Json(r.pooled_auc)},
                  {"ci_level", 0.975},
                  {"ci", {cis[i].low, cis[i].high}},
                  {"time_s", r.total_time},
                  {"substitutions", r.substitutions},
                  {"config", run}}
                 .dump()
          << "\n";
  }
  Json counts = Json::array();
  for (const auto& row : cm.counts) counts.push_back(row);
  Json cohort_names = Json::array();
  for (const auto& c : cm.cohorts) cohort_names.push_back(c.str());
  jsonl << Json{{"type", "confusion"}, {"cohorts", cohort_names}, {"counts", counts}, {"accuracy", cm.accuracy()},
                {"config", run}}
               .dump()
        << "\n";
  if (delta)
    jsonl << Json{{"type", "delta_auc"},
                  {"a", "retrieval"},
                  {"b", "per_cohort_best"},
                  {"mean", delta->mean},
                  {"ci_level", 0.95},
                  {"ci", {delta->low, delta->high}},
                  {"resamples", f.resamples},
                  {"config", run}}
                 .dump()
          << "\n";

  const fs::path out = f.out.empty() ? paths.dir / "reports" : fs::path(f.out);
  fs::create_directories(out);
  io::write_text((out / "report.txt").string(), text.str());
  io::write_text((out / "report.jsonl").string(), jsonl.str());
  std::cout << text.str() << "\nwrote " << (out / "report.txt").string() << ", " << (out / "report.jsonl").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- serve

int cmd_serve(const Globals& g, const std::string& host, int port, std::size_t max_body) {
  const auto la = load_agent(g);
  PredictionService service;
  service.load(la.agent, io::read_features(WorkspacePaths{g.data_dir}.features()));
  httplib::Server server;
  service.mount(server, max_body);
  std::cerr << "listening on " << host << ":" << port << " (" << la.agent->retrieval().index.size()
            << " indexed, backend " << to_string(la.agent->backend_kind()) << ")\n";
  if (!server.listen(host, port)) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cohort-aware risk prediction agent"};
  app.set_config("--config", "", "run configuration file (TOML/INI); flags override it");
  app.require_subcommand(1);

  Globals g;
  app.add_option("--data-dir", g.data_dir, "workspace directory")->capture_default_str();
  app.add_option("--backend", g.backend, "model selection backend: rule|llm")
      ->check(CLI::IsMember({"rule", "llm"}))
      ->capture_default_str();
  app.add_option("--llm-endpoint", g.llm_endpoint, "completion endpoint URL for --backend llm");
  app.add_option("--llm-model", g.llm_model, "model name sent to the endpoint")->capture_default_str();
  app.add_option("--llm-timeout-ms", g.llm_timeout_ms)->capture_default_str();
  app.add_option("--llm-max-in-flight", g.llm_max_in_flight, "concurrent completion requests")->capture_default_str();
  app.add_flag("--llm-no-fallback", g.llm_no_fallback, "fail instead of falling back when the endpoint is down");

  GenerateFlags gen;
  auto* generate_cmd = app.add_subcommand("generate", "write a synthetic dataset into the workspace");
  generate_cmd->add_option("--preset", gen.preset, "mimic|two-cohort")
      ->check(CLI::IsMember({"mimic", "two-cohort"}))
      ->capture_default_str();
  generate_cmd->add_option("--seed", gen.seed)->capture_default_str();
  generate_cmd->add_option("--separation", gen.separation, "two-cohort centroid offset in noise sd")->capture_default_str();
  generate_cmd->add_option("--n-per-cohort", gen.n_per_cohort)->capture_default_str();
  generate_cmd->add_option("--config-dir", gen.config_dir, "directory holding mayo.json and brock.json")
      ->capture_default_str();

  bool lenient = false;
  auto* ingest_cmd = app.add_subcommand("ingest", "validate records and features");
  ingest_cmd->add_flag("--lenient", lenient, "ignore unknown record fields");

  RetrievalFlags build;
  auto* build_cmd = app.add_subcommand("build-index", "split, fit the encoding and index the database part");
  add_retrieval_flags(build_cmd, build);

  std::string patient_id;
  std::optional<std::size_t> query_k;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "retrieve the cohort of one patient");
  retrieve_cmd->add_option("--patient-id", patient_id)->required();
  retrieve_cmd->add_option("--k", query_k)->check(CLI::PositiveNumber);
  auto* predict_cmd = app.add_subcommand("predict", "run the full agent for one patient");
  predict_cmd->add_option("--patient-id", patient_id)->required();
  predict_cmd->add_option("--k", query_k)->check(CLI::PositiveNumber);

  EvaluateFlags ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "compare routing strategies on the held-out split");
  add_retrieval_flags(evaluate_cmd, ev.retrieval);
  evaluate_cmd->add_option("--strategy", ev.strategies, "single:<model>|per_cohort_best|retrieval (repeatable)");
  evaluate_cmd->add_option("--resamples", ev.resamples, "bootstrap resamples")->capture_default_str();
  evaluate_cmd->add_option("--out", ev.out, "report directory (default <data-dir>/reports)");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_body = 1 << 20;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP prediction service");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--max-body", max_body, "request body limit in bytes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (argc <= 1) std::cerr << app.help();
    return 2;
  }

  try {
    if (*generate_cmd) return cmd_generate(g, gen);
    if (*ingest_cmd) return cmd_ingest(g, lenient);
    if (*build_cmd) return cmd_build_index(g, build);
    if (*retrieve_cmd) return cmd_retrieve(g, patient_id, query_k);
    if (*predict_cmd) return cmd_predict(g, patient_id, query_k);
    if (*evaluate_cmd) return cmd_evaluate(g, ev);
    if (*serve_cmd) return cmd_serve(g, host, port, max_body);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
