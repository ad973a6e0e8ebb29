#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "cohort_agent/retrieval.hpp"
#include "support.hpp"

using namespace cohort_agent;
namespace ts = testing_support;

namespace {

std::vector<IndexEntry> three_points() {
  return {{{1.0, 0.0}, CohortId("A"), "e0"}, {{0.0, 1.0}, CohortId("B"), "e1"}, {{-1.0, 0.0}, CohortId("C"), "e2"}};
}

Neighbor nb(const char* cohort, double d, std::size_t pos) { return {"n" + std::to_string(pos), CohortId(cohort), d, pos}; }

}  // namespace

TEST(Index, BuildShape) {
  const auto e = three_points();
  const auto idx = VectorIndex::build(e, Metric::L2);
  EXPECT_EQ(idx.size(), 3u);
  EXPECT_EQ(idx.dimension(), 2u);
}

TEST(Index, BuildErrors) {
  std::vector<IndexEntry> mixed = {{{1.0, 2.0}, CohortId("A"), "a"}, {{1.0, 2.0, 3.0}, CohortId("A"), "b"}};
  try {
    (void)VectorIndex::build(mixed, Metric::L2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
    EXPECT_EQ(to_string(e.code()), "dimension mismatch");
  }
  std::vector<IndexEntry> zero = {{{0.0, 0.0}, CohortId("A"), "z"}};
  try {
    (void)VectorIndex::build(zero, Metric::Cosine);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroNorm);
  }
  EXPECT_NO_THROW((void)VectorIndex::build(zero, Metric::L2));
  EXPECT_THROW((void)VectorIndex::build(std::vector<IndexEntry>{}, Metric::L2), Error);
  std::vector<IndexEntry> nan = {{{NAN, 0.0}, CohortId("A"), "n"}};
  EXPECT_THROW((void)VectorIndex::build(nan, Metric::L2), Error);
}

TEST(Search, SelfMatchFirst) {
  const auto e = three_points();
  const auto idx = VectorIndex::build(e, Metric::L2);
  const auto r = idx.search(std::vector<double>{0.0, 1.0}, 3);
  EXPECT_EQ(r[0].patient_id, "e1");
  EXPECT_EQ(r[0].distance, 0.0);
}

TEST(Search, CosineExample) {
  const auto e = three_points();
  const auto idx = VectorIndex::build(e, Metric::Cosine);
  const auto r = idx.search(std::vector<double>{2.0, 0.0}, 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].patient_id, "e0");
  EXPECT_NEAR(r[0].distance, 0.0, 1e-15);
  EXPECT_EQ(r[1].patient_id, "e1");
  EXPECT_NEAR(r[1].distance, 1.0, 1e-15);
}

TEST(Search, L2Example) {
  const auto e = three_points();
  const auto idx = VectorIndex::build(e, Metric::L2);
  const auto r = idx.search(std::vector<double>{2.0, 0.0}, 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].patient_id, "e0");
  EXPECT_DOUBLE_EQ(r[0].distance, 1.0);
  EXPECT_EQ(r[1].patient_id, "e1");
  EXPECT_NEAR(r[1].distance, 2.2361, 1e-4);
  EXPECT_DOUBLE_EQ(r[1].distance, std::sqrt(5.0));
}

TEST(Search, QueryErrors) {
  const auto e = three_points();
  const auto cos = VectorIndex::build(e, Metric::Cosine);
  EXPECT_THROW((void)cos.search(std::vector<double>{0.0, 0.0}, 1), Error);
  EXPECT_THROW((void)cos.search(std::vector<double>{1.0}, 1), Error);
  EXPECT_THROW((void)cos.search(std::vector<double>{1.0, 1.0}, 0), Error);
}

TEST(Search, KLargerThanNReturnsAll) {
  const auto e = three_points();
  const auto idx = VectorIndex::build(e, Metric::L2);
  EXPECT_EQ(idx.search(std::vector<double>{0.3, 0.1}, 50).size(), 3u);
}

TEST(Search, TiesFollowInsertionOrder) {
  std::vector<IndexEntry> e = {{{1.0, 1.0}, CohortId("A"), "first"},
                               {{0.0, 0.0}, CohortId("B"), "far"},
                               {{1.0, 1.0}, CohortId("C"), "second"},
                               {{1.0, 1.0}, CohortId("A"), "third"}};
  for (Metric m : {Metric::L2, Metric::Cosine}) {
    if (m == Metric::Cosine) e[1].vector = {-1.0, -1.0};
    const auto idx = VectorIndex::build(e, m);
    const auto r = idx.search(std::vector<double>{2.0, 2.0}, 3);
    EXPECT_EQ(r[0].patient_id, "first");
    EXPECT_EQ(r[1].patient_id, "second");
    EXPECT_EQ(r[2].patient_id, "third");
  }
}

class OracleSearch : public ::testing::TestWithParam<Metric> {};

TEST_P(OracleSearch, MatchesBruteForce) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> n_dist(10, 400), d_dist(2, 64);
  for (int trial = 0; trial < 25; ++trial) {
    const auto n = n_dist(rng), d = d_dist(rng);
    const auto entries = ts::random_entries(rng, n, d);
    const auto idx = VectorIndex::build(entries, GetParam());
    std::normal_distribution<double> normal;
    std::vector<double> q(d);
    for (auto& v : q) v = normal(rng);
    const auto oracle = ts::brute_force(idx, q);
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{15}, n}) {
      const auto msg = ts::compare_with_oracle(idx.search(q, k), oracle, k);
      EXPECT_TRUE(msg.empty()) << "n=" << n << " d=" << d << " k=" << k << ": " << msg;
    }
  }
}

TEST_P(OracleSearch, NestingAndPurity) {
  std::mt19937_64 rng(7);
  const auto entries = ts::random_entries(rng, 200, 16);
  const auto idx = VectorIndex::build(entries, GetParam());
  std::vector<double> q(16, 0.25);
  q[3] = -1.0;
  const auto a = idx.search(q, 10);
  const auto b = idx.search(q, 11);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(idx.search(q, 10), a);
  const auto batch = idx.search_batch(std::vector<FusedVector>{q, q}, 10, 2);
  EXPECT_EQ(batch[0], a);
  EXPECT_EQ(batch[1], a);
}

INSTANTIATE_TEST_SUITE_P(BothMetrics, OracleSearch, ::testing::Values(Metric::L2, Metric::Cosine),
                         [](const auto& info) { return to_string(info.param); });

TEST(Search, CosineScaleInvariance) {
  std::mt19937_64 rng(17);
  const auto entries = ts::random_entries(rng, 150, 12);
  const auto idx = VectorIndex::build(entries, Metric::Cosine);
  std::vector<double> q(12);
  std::normal_distribution<double> normal;
  for (auto& v : q) v = normal(rng);
  const auto base = idx.search(q, 15);
  for (double c : {0.5, 2.0, 8.0}) {  // powers of two keep the dot products exact
    std::vector<double> s(q);
    for (auto& v : s) v *= c;
    const auto r = idx.search(s, 15);
    ASSERT_EQ(r.size(), base.size());
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i].patient_id, base[i].patient_id);
  }
}

TEST(Search, L2TranslationInvariance) {
  std::mt19937_64 rng(23);
  auto entries = ts::random_entries(rng, 150, 8);
  // Integer coordinates keep translated differences exact in f32.
  for (auto& e : entries)
    for (auto& v : e.vector) v = std::round(v * 8.0);
  const auto idx = VectorIndex::build(entries, Metric::L2);
  std::vector<double> q = {1, -3, 2, 0, 5, -1, 4, 2};
  const auto base = idx.search(q, 15);
  for (auto& e : entries)
    for (auto& v : e.vector) v += 16.0;
  for (auto& v : q) v += 16.0;
  const auto moved = VectorIndex::build(entries, Metric::L2).search(q, 15);
  EXPECT_EQ(moved, base);
}

// ---------------------------------------------------------------- persistence

TEST(Persistence, RoundTripAndCanonicalBytes) {
  std::mt19937_64 rng(31);
  const auto entries = ts::random_entries(rng, 120, 10);
  const auto dir = ts::temp_dir("persist");
  for (Metric m : {Metric::L2, Metric::Cosine}) {
    const auto idx = VectorIndex::build(entries, m);
    const auto path = (dir / ("idx_" + to_string(m) + ".cavi")).string();
    idx.save(path);
    const auto back = VectorIndex::load(path);
    EXPECT_EQ(back.metric(), m);
    std::vector<double> q(10, 0.1);
    EXPECT_EQ(back.search(q, 15), idx.search(q, 15));
    EXPECT_EQ(back.serialize(), idx.serialize());
  }
}

TEST(Persistence, HeaderLayout) {
  const auto e = three_points();
  const auto bytes = VectorIndex::build(e, Metric::Cosine).serialize();
  ASSERT_GE(bytes.size(), 17u);
  EXPECT_EQ(std::string(bytes.data(), 4), "CAVI");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // cosine
  EXPECT_EQ(bytes[9], 2);  // dim
  EXPECT_EQ(bytes[13], 3);  // count
}

TEST(Persistence, CorruptFilesRejected) {
  const auto e = three_points();
  auto bytes = VectorIndex::build(e, Metric::L2).serialize();
  auto expect_code = [](std::vector<char> b, ErrorCode code) {
    try {
      (void)VectorIndex::deserialize(binary::Reader(std::move(b)));
      ADD_FAILURE() << "accepted corrupt bytes";
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), code) << err.what();
    }
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_code(bad_magic, ErrorCode::CorruptHeader);
  try {
    (void)VectorIndex::deserialize(binary::Reader(bad_magic));
  } catch (const Error& err) {
    EXPECT_NE(std::string(err.what()).find("corrupt header"), std::string::npos);
  }
  auto bad_version = bytes;
  bad_version[4] = 9;
  expect_code(bad_version, ErrorCode::VersionMismatch);
  auto bad_metric = bytes;
  bad_metric[8] = 7;
  expect_code(bad_metric, ErrorCode::CorruptHeader);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  expect_code(truncated, ErrorCode::Truncated);
  auto trailing = bytes;
  trailing.push_back(0);
  expect_code(trailing, ErrorCode::CorruptHeader);
  EXPECT_THROW((void)VectorIndex::load("/nonexistent/dir/x.cavi"), Error);
}

// ---------------------------------------------------------------- vote

TEST(Vote, StrictMajority) {
  NeighborSet n;
  for (std::size_t i = 0; i < 15; ++i) n.push_back(nb(i < 9 ? "A" : "B", 0.1 * static_cast<double>(i), i));
  std::swap(n[0], n[14]);  // order does not matter for a strict majority
  const auto a = majority_vote(n);
  EXPECT_EQ(a.cohort, CohortId("A"));
  EXPECT_FALSE(a.tie_broken);
  EXPECT_EQ(a.vote_counts.at(CohortId("A")), 9u);
  EXPECT_EQ(a.vote_counts.at(CohortId("B")), 6u);
}

TEST(Vote, TieGoesToNearest) {
  const NeighborSet n = {nb("A", 0.1, 0), nb("B", 0.2, 1), nb("B", 0.3, 2), nb("A", 0.5, 3)};
  const auto a = majority_vote(n);
  EXPECT_EQ(a.cohort, CohortId("A"));
  EXPECT_TRUE(a.tie_broken);
  // Same evidence presented in a different order gives the same answer.
  const NeighborSet shuffled = {n[3], n[2], n[0], n[1]};
  EXPECT_EQ(majority_vote(shuffled).cohort, CohortId("A"));
}

TEST(Vote, EqualDistanceTieUsesPosition) {
  const NeighborSet n = {nb("B", 0.2, 4), nb("A", 0.2, 2)};
  EXPECT_EQ(majority_vote(n).cohort, CohortId("A"));
}

TEST(Vote, SingletonAndEmpty) {
  EXPECT_EQ(majority_vote({nb("C", 1.0, 0)}).cohort, CohortId("C"));
  EXPECT_THROW(majority_vote({}), Error);
}

TEST(Vote, NonTiedCohortNeverWinsTieBreak) {
  // C holds the nearest neighbor but only one vote.
  const NeighborSet n = {nb("C", 0.01, 0), nb("A", 0.1, 1), nb("B", 0.2, 2), nb("B", 0.3, 3), nb("A", 0.5, 4)};
  EXPECT_EQ(majority_vote(n).cohort, CohortId("A"));
}

TEST(Retrieve, KOneIsNearestNeighbor) {
  std::mt19937_64 rng(41);
  std::vector<PatientRecord> db;
  std::normal_distribution<double> age(60, 10);
  std::normal_distribution<float> f(0, 1);
  for (int i = 0; i < 60; ++i) {
    auto r = ts::make_record("p" + std::to_string(i), i % 2 ? "A" : "B", age(rng));
    for (auto& v : r.features.values) v = f(rng);
    db.push_back(r);
  }
  const auto stats = fit_encoding(db, ts::small_schema());
  const FusionConfig cfg{Aggregation::Pooled, 0.1};
  std::vector<IndexEntry> entries;
  for (const auto& r : db) entries.push_back({fuse(r, stats, cfg), r.cohort, r.patient_id});
  const auto idx = VectorIndex::build(entries, Metric::L2);
  for (int i = 0; i < 10; ++i) {
    auto q = ts::make_record("q", "A", age(rng));
    for (auto& v : q.features.values) v = f(rng);
    const auto nearest = idx.search(fuse(q, stats, cfg), 1).front();
    EXPECT_EQ(retrieve_cohort(idx, q, stats, cfg, 1).cohort, nearest.cohort);
  }
  // A query duplicating a stored patient whose 15 neighbors share its cohort.
  const auto unanimous = retrieve_cohort(idx, db[0], stats, cfg, 1);
  EXPECT_EQ(unanimous.cohort, db[0].cohort);
  EXPECT_EQ(unanimous.neighbors.front().patient_id, db[0].patient_id);
}
