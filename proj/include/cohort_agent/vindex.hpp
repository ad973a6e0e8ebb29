#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cohort_agent/binary_io.hpp"
#include "cohort_agent/core.hpp"

namespace cohort_agent {

enum class Metric : std::uint8_t { L2 = 0, Cosine = 1 };

inline std::string to_string(Metric m) { return m == Metric::L2 ? "l2" : "cosine"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "l2" || s == "L2") return Metric::L2;
  if (s == "cosine") return Metric::Cosine;
  throw Error(ErrorCode::InvalidArgument, "metric must be l2|cosine, got '" + s + "'");
}

struct IndexEntry {
  FusedVector vector;
  CohortId cohort;
  std::string patient_id;
};

struct Neighbor {
  std::string patient_id;
  CohortId cohort;
  double distance = 0.0;
  std::size_t position = 0;  // insertion order, the secondary sort key

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Ascending by (distance, position); at most k entries.
using NeighborSet = std::vector<Neighbor>;

/// Exact flat index. Vectors are stored as f32 (the on-disk precision);
/// every distance is accumulated and compared in f64. Under cosine the
/// unit-normalized copies are cached at build time.
class VectorIndex {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  static VectorIndex build(std::span<const IndexEntry> entries, Metric metric) {
    if (entries.empty()) throw Error(ErrorCode::EmptyInput, "index needs at least one entry");
    VectorIndex index;
    index.metric_ = metric;
    index.dim_ = entries.front().vector.size();
    if (index.dim_ == 0) throw Error(ErrorCode::DimensionMismatch, "zero-dimensional vectors");
    index.raw_.reserve(entries.size() * index.dim_);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.vector.size() != index.dim_) {
        throw Error(ErrorCode::DimensionMismatch, "entry " + std::to_string(i) + " has dimension " +
                                                      std::to_string(e.vector.size()) + ", expected " +
                                                      std::to_string(index.dim_));
      }
      for (double v : e.vector) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "entry " + std::to_string(i));
        index.raw_.push_back(static_cast<float>(v));
      }
      index.ids_.push_back(e.patient_id);
      index.cohorts_.push_back(e.cohort);
    }
    index.prepare();
    return index;
  }

  [[nodiscard]] std::size_t size() const noexcept { return ids_.size(); }
  [[nodiscard]] std::size_t dimension() const noexcept { return dim_; }
  [[nodiscard]] Metric metric() const noexcept { return metric_; }
  [[nodiscard]] const std::string& patient_id(std::size_t i) const { return ids_.at(i); }
  [[nodiscard]] const CohortId& cohort(std::size_t i) const { return cohorts_.at(i); }
  [[nodiscard]] std::span<const float> vector(std::size_t i) const {
    return std::span<const float>(raw_).subspan(i * dim_, dim_);
  }

  /// Top-k by L2 distance, or by cosine distance (1 - similarity). Returns
  /// all N entries when k > N.
  [[nodiscard]] NeighborSet search(std::span<const double> query, std::size_t k) const {
    if (query.size() != dim_) {
      throw Error(ErrorCode::DimensionMismatch,
                  "query dimension " + std::to_string(query.size()) + ", index dimension " + std::to_string(dim_));
    }
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");

    const std::size_t n = size();
    std::vector<double> dist(n);
    if (metric_ == Metric::L2) {
      for (std::size_t i = 0; i < n; ++i) {
        const float* x = raw_.data() + i * dim_;
        double acc = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
          const double diff = query[j] - static_cast<double>(x[j]);
          acc += diff * diff;
        }
        dist[i] = std::sqrt(acc);
      }
    } else {
      double norm = 0.0;
      for (double v : query) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm > 0.0)) throw Error(ErrorCode::ZeroNorm, "cosine query has zero norm");
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = unit_.data() + i * dim_;
        double dot = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) dot += query[j] * x[j];
        dist[i] = 1.0 - dot / norm;
      }
    }

    const std::size_t take = std::min(k, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto closer = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), closer);

    NeighborSet out;
    out.reserve(take);
    for (std::size_t r = 0; r < take; ++r) {
      const std::size_t i = order[r];
      out.push_back({ids_[i], cohorts_[i], dist[i], i});
    }
    return out;
  }

  /// Results are returned in query order regardless of thread count.
  [[nodiscard]] std::vector<NeighborSet> search_batch(std::span<const FusedVector> queries, std::size_t k,
                                                      unsigned threads = 0) const {
    std::vector<NeighborSet> out(queries.size());
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(queries.size(), 1)));
    if (threads <= 1) {
      for (std::size_t q = 0; q < queries.size(); ++q) out[q] = search(queries[q], k);
      return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t q = t; q < queries.size(); q += threads) out[q] = search(queries[q], k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  }

  // Layout: "CAVI", version u32, metric u8, dimension u32, count u32, then
  // per entry u16-prefixed patient_id, u16-prefixed cohort, dimension x f32.
  [[nodiscard]] std::vector<char> serialize() const {
    binary::Writer w;
    w.bytes("CAVI");
    w.u32(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(metric_));
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(static_cast<std::uint32_t>(size()));
    for (std::size_t i = 0; i < size(); ++i) {
      w.str16(ids_[i]);
      w.str16(cohorts_[i].str());
      for (float v : vector(i)) w.f32(v);
    }
    return w.data();
  }

  void save(const std::string& path) const {
    binary::Writer w;
    const auto bytes = serialize();
    w.bytes(std::string_view(bytes.data(), bytes.size()));
    w.write_file(path);
  }

  static VectorIndex deserialize(binary::Reader r) {
    if (r.remaining() < 4 || r.bytes(4) != "CAVI") throw Error(ErrorCode::CorruptHeader, "bad magic");
    const auto version = r.u32();
    if (version != kFormatVersion)
      throw Error(ErrorCode::VersionMismatch, "index format version " + std::to_string(version));
    const auto metric = r.u8();
    if (metric > 1) throw Error(ErrorCode::CorruptHeader, "metric byte " + std::to_string(metric));
    VectorIndex index;
    index.metric_ = static_cast<Metric>(metric);
    index.dim_ = r.u32();
    const std::size_t count = r.u32();
    if (index.dim_ == 0 || count == 0) throw Error(ErrorCode::CorruptHeader, "empty index");
    index.raw_.reserve(count * index.dim_);
    for (std::size_t i = 0; i < count; ++i) {
      index.ids_.push_back(r.str16());
      index.cohorts_.emplace_back(r.str16());
      for (std::size_t j = 0; j < index.dim_; ++j) {
        const float v = r.f32();
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "stored vector " + std::to_string(i));
        index.raw_.push_back(v);
      }
    }
    if (r.remaining() != 0) throw Error(ErrorCode::CorruptHeader, "trailing bytes after last entry");
    index.prepare();
    return index;
  }

  static VectorIndex load(const std::string& path) { return deserialize(binary::Reader::from_file(path)); }

 private:
  VectorIndex() = default;

  void prepare() {
    if (metric_ != Metric::Cosine) return;
    unit_.resize(raw_.size());
    for (std::size_t i = 0; i < size(); ++i) {
      double norm = 0.0;
      for (float v : vector(i)) norm += static_cast<double>(v) * static_cast<double>(v);
      norm = std::sqrt(norm);
      if (!(norm > 0.0)) throw Error(ErrorCode::ZeroNorm, "entry '" + ids_[i] + "' has zero norm under cosine");
      for (std::size_t j = 0; j < dim_; ++j) unit_[i * dim_ + j] = static_cast<double>(raw_[i * dim_ + j]) / norm;
    }
  }

  Metric metric_ = Metric::L2;
  std::size_t dim_ = 0;
  std::vector<float> raw_;
  std::vector<double> unit_;
  std::vector<std::string> ids_;
  std::vector<CohortId> cohorts_;
};

}  // namespace cohort_agent
