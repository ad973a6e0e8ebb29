#pragma once

#include <algorithm>
#include <map>

#include "cohort_agent/fusion.hpp"
#include "cohort_agent/vindex.hpp"

namespace cohort_agent {

inline constexpr std::size_t kDefaultTopK = 15;

struct CohortAssignment {
  CohortId cohort;
  std::map<CohortId, std::size_t> vote_counts;
  NeighborSet neighbors;
  bool tie_broken = false;
};

/// Mode of the neighbor cohort labels. Among cohorts tied at the maximal
/// count, the one holding the single nearest neighbor wins (distance, then
/// insertion position).
inline CohortAssignment majority_vote(const NeighborSet& neighbors) {
  if (neighbors.empty()) throw Error(ErrorCode::EmptyInput, "majority vote over an empty neighbor set");
  CohortAssignment out;
  out.neighbors = neighbors;
  for (const auto& n : neighbors) ++out.vote_counts[n.cohort];

  std::size_t best = 0;
  for (const auto& [c, count] : out.vote_counts) best = std::max(best, count);
  std::size_t tied = 0;
  for (const auto& [c, count] : out.vote_counts) tied += count == best ? 1 : 0;

  if (tied == 1) {
    for (const auto& [c, count] : out.vote_counts)
      if (count == best) out.cohort = c;
    return out;
  }

  const Neighbor* nearest = nullptr;
  for (const auto& n : neighbors) {
    if (out.vote_counts[n.cohort] != best) continue;
    if (nearest == nullptr || n.distance < nearest->distance ||
        (n.distance == nearest->distance && n.position < nearest->position))
      nearest = &n;
  }
  out.cohort = nearest->cohort;
  out.tie_broken = true;
  return out;
}

inline CohortAssignment retrieve_cohort(const VectorIndex& index, const PatientRecord& record,
                                        const EncodingStats& stats, const FusionConfig& config,
                                        std::size_t k = kDefaultTopK) {
  const FusedVector x = fuse(record, stats, config);
  return majority_vote(index.search(x, k));
}

}  // namespace cohort_agent
