#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "cohort_agent/http_clients.hpp"
#include "cohort_agent/service.hpp"
#include "cohort_agent/synth.hpp"
#include "support.hpp"

using namespace cohort_agent;
namespace ts = testing_support;

namespace {

void append_line(const std::filesystem::path& p, const std::string& line) {
  std::ofstream out(p, std::ios::app);
  out << line << "\n";
}

struct Workspace {
  std::filesystem::path dir;
  SyntheticDataset ds;
  std::string records, features;

  explicit Workspace(const std::string& name, std::size_t n = 5)
      : dir(ts::temp_dir(name)), ds(generate(two_cohort_specs(3.0, n), 17)) {
    records = (dir / "records.jsonl").string();
    features = (dir / "features.cafv").string();
    io::write_dataset(records, features, ds.records);
  }
};

/// Serves one fixed reply on POST `path` from a background thread.
class FixedServer {
 public:
  FixedServer(std::string path, std::string reply, int status = 200) {
    server_.Post(path, [reply, status, this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      last_body = req.body;
      res.status = status;
      res.set_content(reply, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FixedServer() {
    server_.stop();
    thread_.join();
  }
  [[nodiscard]] std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }
  std::atomic<int> hits{0};
  std::string last_body;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

// ---------------------------------------------------------------- ingest

TEST(Ingest, RoundTripsRecords) {
  Workspace ws("ingest_rt");
  const auto rep = io::ingest(ws.records, ws.features, ws.ds.schema);
  EXPECT_EQ(rep.lines, 10u);
  EXPECT_EQ(rep.records, ws.ds.records);
  EXPECT_EQ(rep.per_cohort.at(CohortId("COHORT_A")), 5u);
}

TEST(Ingest, DanglingFeatureRefNamesPatient) {
  Workspace ws("ingest_dangling");
  std::vector<FeatureMap> few(3, ts::constant_map(0.0f));
  io::write_features(ws.features, few);
  try {
    (void)io::ingest(ws.records, ws.features, ws.ds.schema);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(ws.ds.records[3].patient_id), std::string::npos) << e.what();
  }
}

TEST(Ingest, DuplicatePatient) {
  Workspace ws("ingest_dup");
  append_line(ws.records, io::record_line(ws.ds.records[0], 0).dump());
  try {
    (void)io::ingest(ws.records, ws.features, ws.ds.schema);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
  }
}

TEST(Ingest, ParseErrorCarriesLineNumber) {
  Workspace ws("ingest_line");
  append_line(ws.records, "{not json");
  try {
    (void)io::ingest(ws.records, ws.features, ws.ds.schema);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parse);
    EXPECT_NE(std::string(e.what()).find(":11:"), std::string::npos) << e.what();
  }
}

TEST(Ingest, UnknownFieldsNeedLenient) {
  Workspace ws("ingest_lenient");
  auto j = io::record_line(ws.ds.records[0], 0);
  j["patient_id"] = "extra";
  j["site_note"] = "x";
  append_line(ws.records, j.dump());
  EXPECT_THROW(io::ingest(ws.records, ws.features, ws.ds.schema), Error);
  const auto rep = io::ingest(ws.records, ws.features, ws.ds.schema, {true});
  EXPECT_EQ(rep.records.size(), 11u);
}

TEST(Ingest, InvalidRecordReportsIssue) {
  Workspace ws("ingest_invalid");
  auto j = io::record_line(ws.ds.records[0], 0);
  j["patient_id"] = "bad-label";
  j["label"] = 2;
  append_line(ws.records, j.dump());
  try {
    (void)io::ingest(ws.records, ws.features, ws.ds.schema);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad-label"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("label domain"), std::string::npos) << e.what();
  }
}

TEST(Features, BinaryRoundTripAndCorruption) {
  std::vector<FeatureMap> maps = {ts::constant_map(1.5f), ts::constant_map(-0.25f)};
  maps[1].values[77] = 3.0e-38f;
  const auto bytes = io::encode_features(maps);
  EXPECT_EQ(io::decode_features(binary::Reader(bytes)), maps);
  auto bad = bytes;
  bad[0] ^= 0x5A;
  EXPECT_THROW(io::decode_features(binary::Reader(bad)), Error);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(io::decode_features(binary::Reader(cut)), Error);
}

// ---------------------------------------------------------------- tables and registry

TEST(Table, CsvRoundTrip) {
  const auto ds = generate(mimic_specs(), 1);
  auto t = ds.table;
  t.set(CohortId("VLSP"), ModelId("TD-ViT"), {0.6, false});
  const auto back = io::table_from_csv(io::table_to_csv(t));
  EXPECT_EQ(io::table_to_csv(back), io::table_to_csv(t));
  EXPECT_EQ(back.entries().size(), t.entries().size());
  EXPECT_THROW(io::table_from_csv("cohort,model,auc,applicable\nA,M,0.7\n"), Error);
  EXPECT_THROW(io::table_from_csv("A,M,high,true\n"), Error);
  EXPECT_THROW(io::table_from_csv("A,M,0.7,maybe\n"), Error);
  EXPECT_THROW(io::table_from_csv("A,M,1.7,true\n"), Error);
}

TEST(Registry, JsonRoundTrip) {
  const auto specs = mimic_specs();
  auto reg = stub_models(specs, 3, default_stub_costs());
  reg.add(io::read_logistic_model(std::string(COHORT_AGENT_CONFIG_DIR) + "/mayo.json"));
  reg.add(io::read_logistic_model(std::string(COHORT_AGENT_CONFIG_DIR) + "/brock.json"));
  const auto dir = ts::temp_dir("registry_rt");
  const auto path = (dir / "models.json").string();
  io::write_registry(path, reg);
  const auto back = io::read_registry(path);
  ASSERT_EQ(back.size(), reg.size());
  for (const auto& spec : reg.specs()) EXPECT_EQ(io::model_to_json(back.get(spec.id)), io::model_to_json(spec));
}

TEST(Encoding, StatsRoundTripGivesIdenticalVectors) {
  const auto ds = generate(mimic_specs(), 2);
  const auto stats = fit_encoding(ds.records, ds.schema);
  const auto back = io::stats_from_json(io::stats_to_json(stats));
  for (std::size_t i = 0; i < ds.records.size(); i += 97) {
    EXPECT_EQ(fuse(ds.records[i], stats, {}), fuse(ds.records[i], back, {}));
  }
}

// ---------------------------------------------------------------- http clients

TEST(HttpAdapter, ScoresThroughTransport) {
  FixedServer server("/score", R"({"probability": 0.25})");
  ModelSpec spec;
  spec.id = ModelId("Remote");
  spec.kind = ModelKind::Adapter;
  spec.adapter.url = server.url("/score");
  HttpAdapterTransport transport;
  const auto rec = generate(two_cohort_specs(1.0, 5), 1).records[0];
  EXPECT_EQ(predict(spec, rec, &transport).probability, 0.25);
  EXPECT_EQ(Json::parse(server.last_body).at("patient_id"), rec.patient_id);
}

TEST(HttpAdapter, BadRepliesAndOutages) {
  const auto rec = generate(two_cohort_specs(1.0, 5), 1).records[0];
  HttpAdapterTransport transport;
  ModelSpec spec;
  spec.id = ModelId("Remote");
  spec.kind = ModelKind::Adapter;
  spec.adapter.timeout_ms = 500;
  spec.adapter.retries = 2;
  {
    FixedServer server("/score", R"({"probability": 1.5})");
    spec.adapter.url = server.url("/score");
    EXPECT_THROW(predict(spec, rec, &transport), Error);
  }
  {
    FixedServer server("/score", "oops", 500);
    spec.adapter.url = server.url("/score");
    try {
      (void)predict(spec, rec, &transport);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::AdapterUnavailable);
    }
    EXPECT_EQ(server.hits.load(), 3);  // one try plus two retries
  }
}

TEST(HttpCompletion, ReplyShapes) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {R"({"text": "DLS"})", "DLS"},
      {R"({"choices": [{"message": {"content": "Sybil"}}]})", "Sybil"},
      {R"({"choices": [{"text": "DLI"}]})", "DLI"},
      {"plain words", "plain words"},
  };
  for (const auto& [reply, want] : cases) {
    FixedServer server("/v1/complete", reply);
    HttpCompletionBackend backend({server.url("/v1/complete"), "m", 2000, 0, 2});
    EXPECT_EQ(backend.complete("which model?"), want);
    const auto sent = Json::parse(server.last_body);
    EXPECT_EQ(sent.at("prompt"), "which model?");
    EXPECT_EQ(sent.at("temperature"), 0);
  }
}

TEST(HttpCompletion, UnreachableIsUnavailable) {
  const int port = ts::free_port();
  HttpCompletionBackend backend({"http://127.0.0.1:" + std::to_string(port) + "/x", "m", 300, 1, 1});
  try {
    (void)backend.complete("p");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
  EXPECT_THROW(parse_endpoint("localhost:80/x"), Error);
}

// ---------------------------------------------------------------- service

namespace {

struct ServiceFixture : ::testing::Test {
  SyntheticDataset ds = generate(two_cohort_specs(10.0, 60), 5);
  Split parts = split(ds.records, {});
  std::vector<FeatureMap> store;
  PredictionService service;

  void SetUp() override {
    for (const auto& r : ds.records) store.push_back(r.features);
    auto agent = std::make_shared<Agent>(ds.schema, stub_models(two_cohort_specs(10.0, 60), 5), ds.table,
                                         prepare_retrieval(parts.database, ds.schema, {}, Metric::Cosine), AgentConfig{});
    service.load(agent, store);
  }

  Json request_for(const PatientRecord& r, bool by_ref) const {
    Json j{{"patient_id", r.patient_id},
           {"metadata", metadata_to_json(r.metadata)},
           {"timepoints", r.timepoints},
           {"ground_truth", {{"cohort", r.cohort.str()}, {"label", r.label}}}};
    if (by_ref) {
      for (std::size_t i = 0; i < ds.records.size(); ++i)
        if (ds.records[i].patient_id == r.patient_id) j["feature_ref"] = i;
    } else {
      j["features"] = record_to_json(r)["features"];
    }
    return j;
  }
};

}  // namespace

TEST(Service, NotReadyBeforeLoad) {
  PredictionService s;
  EXPECT_EQ(s.handle_health().status, 503);
  EXPECT_EQ(s.handle_predict("{}").status, 503);
}

TEST_F(ServiceFixture, Health) {
  const auto h = service.handle_health();
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body["index_size"], parts.database.size());
  EXPECT_EQ(h.body["models"], 2);
  EXPECT_EQ(h.body["metric"], "cosine");
  EXPECT_EQ(h.body["backend"], "rule");
}

TEST_F(ServiceFixture, RequestErrors) {
  EXPECT_EQ(service.handle_predict("{oops").status, 400);
  EXPECT_EQ(service.handle_predict("[1,2]").status, 400);
  auto both = request_for(parts.holdout[0], false);
  both["feature_ref"] = 0;
  EXPECT_EQ(service.handle_predict(both.dump()).status, 400);
  auto neither = request_for(parts.holdout[0], false);
  neither.erase("features");
  EXPECT_EQ(service.handle_predict(neither.dump()).status, 400);
  auto far = request_for(parts.holdout[0], true);
  far["feature_ref"] = store.size();
  EXPECT_EQ(service.handle_predict(far.dump()).status, 400);
  auto zero_k = request_for(parts.holdout[0], true);
  zero_k["k"] = 0;
  EXPECT_EQ(service.handle_predict(zero_k.dump()).status, 400);
}

TEST_F(ServiceFixture, WrongFeatureShape) {
  auto j = request_for(parts.holdout[0], false);
  j["features"].erase(4);
  const auto r = service.handle_predict(j.dump());
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.body["error"], "feature shape");
}

TEST_F(ServiceFixture, InlineAndRefAgree) {
  const auto& p = parts.holdout[3];
  auto a = service.handle_predict(request_for(p, false).dump());
  auto b = service.handle_predict(request_for(p, true).dump());
  ASSERT_EQ(a.status, 200) << a.body.dump();
  a.body.erase("timing_ms");
  b.body.erase("timing_ms");
  EXPECT_EQ(a.body, b.body);
  EXPECT_EQ(a.body["cohort"], p.cohort.str());
  EXPECT_EQ(a.body["neighbor_ids"].size(), kDefaultTopK);
  EXPECT_GE(a.body["risk"].get<double>(), 0.0);
  EXPECT_LE(a.body["risk"].get<double>(), 1.0);
}

TEST_F(ServiceFixture, DatabasePatientFindsItself) {
  const auto& p = parts.database[7];
  const auto r = service.handle_predict(request_for(p, true).dump());
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["cohort"], p.cohort.str());
  EXPECT_EQ(r.body["neighbor_ids"][0], p.patient_id);
}

TEST_F(ServiceFixture, KOverride) {
  auto j = request_for(parts.holdout[0], true);
  j["k"] = 3;
  const auto r = service.handle_predict(j.dump());
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["neighbor_ids"].size(), 3u);
}

TEST_F(ServiceFixture, NoApplicableModelIs422) {
  auto j = request_for(parts.holdout[0], true);
  j["ground_truth"]["cohort"] = "ELSEWHERE";
  // Cohort labels only feed the stubs; validation rejects unknown cohorts first.
  EXPECT_EQ(service.handle_predict(j.dump()).status, 400);

  auto agent = std::make_shared<Agent>(ds.schema, stub_models(two_cohort_specs(10.0, 60), 5, {{ModelId("M1"), 0.0, 3}}),
                                       ds.table, prepare_retrieval(parts.database, ds.schema, {}, Metric::Cosine),
                                       AgentConfig{});
  PredictionService strict;
  strict.load(agent, store);
  EXPECT_EQ(strict.handle_predict(request_for(parts.holdout[0], true).dump()).status, 422);
}

TEST_F(ServiceFixture, ConcurrentIdenticalRequestsOverHttp) {
  httplib::Server server;
  service.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const auto body = request_for(parts.holdout[5], true).dump();
  std::vector<Json> replies(8);
  std::vector<int> statuses(8, 0);
  std::vector<std::thread> clients;
  for (int i = 0; i < 8; ++i) {
    clients.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      for (int rep = 0; rep < 5; ++rep) {
        auto res = c.Post("/v1/predict", body, "application/json");
        if (!res) return;
        statuses[i] = res->status;
        replies[i] = Json::parse(res->body);
        replies[i].erase("timing_ms");
      }
    });
  }
  for (auto& c : clients) c.join();
  httplib::Client c("127.0.0.1", port);
  auto health = c.Get("/v1/health");
  server.stop();
  t.join();

  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(statuses[i], 200);
    EXPECT_EQ(replies[i], replies[0]);
  }
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
}

TEST_F(ServiceFixture, LlmBackendChoosesThroughAgent) {
  FixedServer llm("/v1/complete", R"({"text": "M2"})");
  auto backend = std::make_shared<HttpCompletionBackend>(CompletionEndpoint{llm.url("/v1/complete"), "m", 2000, 0, 2});
  Agent agent(ds.schema, stub_models(two_cohort_specs(10.0, 60), 5), ds.table,
              prepare_retrieval(parts.database, ds.schema, {}, Metric::Cosine), AgentConfig{}, backend);
  const auto r = agent.run(parts.holdout[0]);
  EXPECT_EQ(r.decision.backend, Backend::Llm);
  EXPECT_EQ(r.decision.model, ModelId("M2"));
  EXPECT_FALSE(r.decision.fallback);
  EXPECT_GE(llm.hits.load(), 1);
}
