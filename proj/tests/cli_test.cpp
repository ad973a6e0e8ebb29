#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "cohort_agent/io.hpp"
#include "support.hpp"

using cohort_agent::Json;
namespace ts = testing_support;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(COHORT_AGENT_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

class CliWorkspace : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = ts::temp_dir("cli").string();
    ASSERT_EQ(run(data() + " generate --preset two-cohort --n-per-cohort 40 --seed 3").status, 0);
    ASSERT_EQ(run(data() + " build-index --k 5").status, 0);
  }
  static std::string data() { return "--data-dir " + dir_; }
  static std::string dir_;
};

std::string CliWorkspace::dir_;

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("no-such-command").status, 2);
  EXPECT_EQ(run("predict").status, 2);
  EXPECT_EQ(run("--backend sometimes ingest").status, 2);
  EXPECT_EQ(run("--help").status, 0);
}

TEST(Cli, MissingWorkspaceExitsOne) {
  EXPECT_EQ(run("--data-dir /nonexistent/cohort_agent ingest").status, 1);
}

TEST_F(CliWorkspace, IngestAndPredict) {
  EXPECT_EQ(run(data() + " ingest").status, 0);
  const auto r = run(data() + " predict --patient-id COHORT_B-00001");
  ASSERT_EQ(r.status, 0);
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["patient_id"], "COHORT_B-00001");
  EXPECT_EQ(j["cohort"], "COHORT_B");
  EXPECT_EQ(j["neighbor_ids"].size(), 5u);
  EXPECT_EQ(j["backend"], "rule");
  EXPECT_EQ(j["seed"], 20250101);
  EXPECT_EQ(run(data() + " predict --patient-id COHORT_B-00001").out, r.out);
}

TEST_F(CliWorkspace, RetrieveHonoursK) {
  const auto r = run(data() + " retrieve --patient-id COHORT_A-00002 --k 3");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(Json::parse(r.out)["neighbors"].size(), 3u);
  EXPECT_EQ(run(data() + " retrieve --patient-id nobody").status, 1);
}

TEST_F(CliWorkspace, EvaluateWritesReports) {
  const auto out = dir_ + "/reports";
  const auto r = run(data() + " evaluate --k 5 --resamples 200 --out " + out);
  ASSERT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("retrieval"), std::string::npos);
  const auto lines = cohort_agent::io::read_text(out + "/report.jsonl");
  EXPECT_NE(lines.find("\"delta_auc\""), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(out + "/report.txt"));
}
