#pragma once
// Test-only helpers: fixtures and independent reference implementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "cohort_agent/core.hpp"
#include "cohort_agent/vindex.hpp"

namespace testing_support {

using namespace cohort_agent;

inline FeatureMap constant_map(float v) {
  FeatureMap m;
  std::fill(m.values.begin(), m.values.end(), v);
  return m;
}

inline MetadataSchema small_schema() {
  MetadataSchema s;
  s.fields.push_back({"age", FieldKind::Numeric, {}, "years", true});
  s.fields.push_back({"smoking_status", FieldKind::Categorical, {"current", "former", "never"}, "", false});
  s.cohorts = {CohortId("A"), CohortId("B")};
  return s;
}

inline PatientRecord make_record(std::string id, const char* cohort, double age, int label = 0) {
  PatientRecord r;
  r.patient_id = std::move(id);
  r.cohort = CohortId(cohort);
  r.metadata["age"] = age;
  r.metadata["smoking_status"] = std::string("former");
  r.label = label;
  return r;
}

/// Pairwise-count AUC, O(n+ * n-), exact rational numerator in 2x units.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& l) {
  std::int64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (l[i] == 1 ? pos : neg) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != 0) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

struct OracleHit {
  std::size_t position;
  double distance;
};

/// Full sort by distance over the vectors as the index stores them (f32),
/// stable in insertion order. Cosine is computed directly from the raw
/// vectors rather than from unit copies.
inline std::vector<OracleHit> brute_force(const VectorIndex& index, const std::vector<double>& q) {
  std::vector<OracleHit> all;
  double qn = 0.0;
  for (double v : q) qn += v * v;
  qn = std::sqrt(qn);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto x = index.vector(i);
    double d = 0.0;
    if (index.metric() == Metric::L2) {
      for (std::size_t j = 0; j < q.size(); ++j) d += (q[j] - x[j]) * (q[j] - x[j]);
      d = std::sqrt(d);
    } else {
      double dot = 0.0, xn = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        dot += q[j] * x[j];
        xn += static_cast<double>(x[j]) * x[j];
      }
      d = 1.0 - dot / (qn * std::sqrt(xn));
    }
    all.push_back({i, d});
  }
  std::stable_sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) { return a.distance < b.distance; });
  return all;
}

/// Compares a search result with the oracle. Entries whose oracle
/// distances agree within `tol` count as tied and may appear in either
/// order; everything else must match exactly. Returns an empty string on
/// agreement, else a description.
inline std::string compare_with_oracle(const NeighborSet& got, const std::vector<OracleHit>& oracle, std::size_t k,
                                       double tol = 1e-9) {
  const std::size_t take = std::min(k, oracle.size());
  if (got.size() != take) return "size " + std::to_string(got.size()) + " != " + std::to_string(take);
  std::vector<double> oracle_dist(oracle.size());
  for (const auto& h : oracle) oracle_dist[h.position] = h.distance;
  for (std::size_t r = 0; r < take; ++r) {
    const double want = oracle[r].distance;
    const double have = oracle_dist[got[r].position];
    if (std::abs(want - have) > tol * std::max(1.0, std::abs(want)))
      return "rank " + std::to_string(r) + ": distance " + std::to_string(have) + " vs oracle " + std::to_string(want);
    if (r > 0 && got[r].distance == got[r - 1].distance && got[r].position < got[r - 1].position)
      return "rank " + std::to_string(r) + ": exact tie not in insertion order";
  }
  // Id sets must agree unless the k-th and (k+1)-th oracle distances tie.
  if (take < oracle.size() &&
      std::abs(oracle[take - 1].distance - oracle[take].distance) <= tol * std::max(1.0, std::abs(oracle[take].distance)))
    return {};
  std::vector<std::size_t> a, b;
  for (std::size_t r = 0; r < take; ++r) {
    a.push_back(got[r].position);
    b.push_back(oracle[r].position);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) return "id sets differ";
  return {};
}

/// Random dataset with a few exact duplicate rows to exercise tie order.
inline std::vector<IndexEntry> random_entries(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<IndexEntry> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].patient_id = "p" + std::to_string(i);
    out[i].cohort = CohortId(i % 3 == 0 ? "A" : (i % 3 == 1 ? "B" : "C"));
    out[i].vector.resize(d);
    for (auto& v : out[i].vector) v = normal(rng);
  }
  for (std::size_t i = 1; i < n; i += 7) out[i].vector = out[i - 1].vector;
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cohort_agent_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// A loopback port that was free a moment ago. The probe socket is closed
/// before returning, so nothing in this process keeps listening on it.
inline int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof addr;
  int port = -1;
  if (fd >= 0 && ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0 &&
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0)
    port = ntohs(addr.sin_port);
  if (fd >= 0) ::close(fd);
  return port;
}

}  // namespace testing_support
