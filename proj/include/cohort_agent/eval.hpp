#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cohort_agent/policy.hpp"
#include "cohort_agent/retrieval.hpp"

namespace cohort_agent {

// ---------------------------------------------------------------- split

struct SplitSpec {
  double holdout_fraction = 0.30;
  std::uint64_t seed = 20250101;
};

struct Split {
  std::vector<PatientRecord> database;
  std::vector<PatientRecord> holdout;
};

/// Stratified per cohort: each cohort contributes round(fraction * n)
/// patients to the holdout, clamped so both partitions are non-empty. Both
/// partitions keep the input order.
inline Split split(std::span<const PatientRecord> dataset, const SplitSpec& spec) {
  if (!(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "holdout fraction must lie in (0,1)");
  std::map<CohortId, std::vector<std::size_t>> by_cohort;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_cohort[dataset[i].cohort].push_back(i);

  std::mt19937_64 rng(spec.seed);
  std::vector<char> held(dataset.size(), 0);
  for (auto& [cohort, members] : by_cohort) {
    if (members.size() < 2)
      throw Error(ErrorCode::InvalidArgument, "cohort " + cohort.str() + " has fewer than 2 patients");
    auto n_hold = static_cast<std::size_t>(std::llround(spec.holdout_fraction * static_cast<double>(members.size())));
    n_hold = std::clamp<std::size_t>(n_hold, 1, members.size() - 1);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < n_hold; ++i) held[members[i]] = 1;
  }
  Split out;
  for (std::size_t i = 0; i < dataset.size(); ++i) (held[i] ? out.holdout : out.database).push_back(dataset[i]);
  return out;
}

// ---------------------------------------------------------------- AUC

/// Mann-Whitney statistic kept in integers: twice_u counts each
/// positive-over-negative pair as 2 and each tie as 1.
struct AucStatistic {
  std::uint64_t twice_u = 0;
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;

  [[nodiscard]] double value() const {
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  }
};

inline AucStatistic auc_statistic(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::InvalidArgument, "scores and labels differ in length");
  AucStatistic st;
  for (int l : labels) {
    if (l == 1) {
      ++st.n_pos;
    } else if (l == 0) {
      ++st.n_neg;
    } else {
      throw Error(ErrorCode::LabelDomain, "label " + std::to_string(l));
    }
  }
  if (st.n_pos == 0 || st.n_neg == 0) throw Error(ErrorCode::AucUndefined, "needs both classes");
  for (double s : scores)
    if (std::isnan(s)) throw Error(ErrorCode::NonFinite, "NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the midrank of a tie block spanning 1-based ranks [lo, hi] is lo + hi.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t twice_mid = (i + 1) + (j + 1);
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) twice_rank_sum += twice_mid;
    i = j + 1;
  }
  st.twice_u = twice_rank_sum - st.n_pos * (st.n_pos + 1);
  return st;
}

inline double auc(std::span<const double> scores, std::span<const int> labels) {
  return auc_statistic(scores, labels).value();
}

// ---------------------------------------------------------------- confusion

struct ConfusionMatrix {
  std::vector<CohortId> cohorts;                   // row and column order
  std::vector<std::vector<std::size_t>> counts;    // [true][assigned]

  [[nodiscard]] std::size_t row_total(std::size_t r) const {
    return std::accumulate(counts[r].begin(), counts[r].end(), std::size_t{0});
  }
  [[nodiscard]] std::size_t total() const {
    std::size_t t = 0;
    for (std::size_t r = 0; r < counts.size(); ++r) t += row_total(r);
    return t;
  }
  [[nodiscard]] std::size_t correct() const {
    std::size_t t = 0;
    for (std::size_t r = 0; r < counts.size(); ++r) t += counts[r][r];
    return t;
  }
  /// NaN for a cohort with no held-out patients.
  [[nodiscard]] double row_accuracy(std::size_t r) const {
    const auto n = row_total(r);
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(counts[r][r]) / static_cast<double>(n);
  }
  [[nodiscard]] double accuracy() const {
    return static_cast<double>(correct()) / static_cast<double>(total());
  }
};

/// Rows are true cohorts, columns assigned cohorts. `order` fixes the axis
/// order; cohorts not listed there are appended in lexicographic order.
inline ConfusionMatrix confusion(std::span<const std::pair<CohortId, CohortId>> assignments,
                                 std::span<const CohortId> order = {}) {
  if (assignments.empty()) throw Error(ErrorCode::EmptyInput, "no assignments");
  ConfusionMatrix m;
  m.cohorts.assign(order.begin(), order.end());
  std::map<CohortId, std::size_t> extra;
  for (const auto& [t, a] : assignments) {
    for (const CohortId* c : {&t, &a})
      if (std::find(m.cohorts.begin(), m.cohorts.end(), *c) == m.cohorts.end()) extra[*c] = 0;
  }
  for (const auto& [c, unused] : extra) m.cohorts.push_back(c);
  std::map<CohortId, std::size_t> pos;
  for (std::size_t i = 0; i < m.cohorts.size(); ++i) pos[m.cohorts[i]] = i;
  m.counts.assign(m.cohorts.size(), std::vector<std::size_t>(m.cohorts.size(), 0));
  for (const auto& [t, a] : assignments) ++m.counts[pos[t]][pos[a]];
  return m;
}

// ---------------------------------------------------------------- strategies

struct Strategy {
  enum class Kind { Single, PerCohortBest, Retrieval };
  Kind kind = Kind::Retrieval;
  ModelId model;  // Single only

  [[nodiscard]] std::string name() const {
    switch (kind) {
      case Kind::Single: return "single:" + model.str();
      case Kind::PerCohortBest: return "per_cohort_best";
      case Kind::Retrieval: return "retrieval";
    }
    return "?";
  }

  static Strategy single(ModelId m) { return {Kind::Single, std::move(m)}; }
  static Strategy per_cohort_best() { return {Kind::PerCohortBest, {}}; }
  static Strategy retrieval() { return {Kind::Retrieval, {}}; }

  static Strategy parse(const std::string& s) {
    if (s == "retrieval") return retrieval();
    if (s == "per_cohort_best" || s == "oracle") return per_cohort_best();
    if (s.rfind("single:", 0) == 0 && s.size() > 7) return single(ModelId(s.substr(7)));
    throw Error(ErrorCode::InvalidArgument, "strategy must be single:<model>|per_cohort_best|retrieval, got '" + s + "'");
  }
};

/// Everything retrieval needs, prepared once from the database so the
/// compared strategies share it and index build time stays out of timings.
struct RetrievalSetup {
  EncodingStats stats;
  FusionConfig fusion;
  VectorIndex index;
  std::size_t k = kDefaultTopK;
};

inline RetrievalSetup prepare_retrieval(std::span<const PatientRecord> database, const MetadataSchema& schema,
                                        const FusionConfig& fusion, Metric metric, std::size_t k = kDefaultTopK) {
  auto stats = fit_encoding(database, schema);
  std::vector<IndexEntry> entries;
  entries.reserve(database.size());
  for (const auto& r : database) entries.push_back({fuse(r, stats, fusion), r.cohort, r.patient_id});
  return {std::move(stats), fusion, VectorIndex::build(entries, metric), k};
}

struct PatientOutcome {
  std::string patient_id;
  CohortId true_cohort;
  CohortId assigned_cohort;  // retrieved cohort; equals true_cohort for other strategies
  ModelId model;
  double score = 0.0;
  int label = 0;
  double wall_time = 0.0;
  bool substituted = false;  // preferred model was not applicable
};

struct CohortResult {
  CohortId cohort;
  std::size_t n = 0;
  double auc = std::numeric_limits<double>::quiet_NaN();  // NaN when single-class
  double wall_time = 0.0;
};

struct StrategyReport {
  std::string strategy;
  std::vector<CohortResult> cohorts;  // lexicographic by cohort id
  double overall_auc = std::numeric_limits<double>::quiet_NaN();  // mean of defined per-cohort AUCs
  double pooled_auc = std::numeric_limits<double>::quiet_NaN();
  double total_time = 0.0;
  std::size_t substitutions = 0;
  std::vector<PatientOutcome> outcomes;  // holdout order
};

struct StrategyContext {
  const ModelRegistry& registry;
  const PerformanceTable& table;
  const RetrievalSetup* retrieval = nullptr;  // required by the retrieval strategy
  CompletionBackend* backend = nullptr;       // null selects the rule backend
  AdapterTransport* transport = nullptr;
  SelectOptions select_options = {};
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Tries the preferred model, then the cohort's ranked models in order.
inline std::pair<ModelId, PredictionOutput> score_with_fallback(const ModelId& preferred, const CohortId& cohort,
                                                                 const PatientRecord& record,
                                                                 const StrategyContext& ctx, bool& substituted) {
  substituted = false;
  try {
    return {preferred, predict(ctx.registry.get(preferred), record, ctx.transport)};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotApplicable) throw;
  }
  substituted = true;
  for (const auto& m : ranked_models(ctx.table, cohort, record, ctx.registry)) {
    if (m == preferred) continue;
    try {
      return {m, predict(ctx.registry.get(m), record, ctx.transport)};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotApplicable) throw;
    }
  }
  throw Error(ErrorCode::NoApplicableModel, "patient " + record.patient_id + " in cohort " + cohort.str());
}

}  // namespace detail

inline StrategyReport summarize(std::string strategy, std::vector<PatientOutcome> outcomes) {
  StrategyReport rep;
  rep.strategy = std::move(strategy);
  std::map<CohortId, std::vector<const PatientOutcome*>> groups;
  for (const auto& o : outcomes) groups[o.true_cohort].push_back(&o);

  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (const auto& [cohort, members] : groups) {
    CohortResult cr;
    cr.cohort = cohort;
    cr.n = members.size();
    std::vector<double> s;
    std::vector<int> l;
    for (const auto* o : members) {
      s.push_back(o->score);
      l.push_back(o->label);
      cr.wall_time += o->wall_time;
      if (o->substituted) ++rep.substitutions;
    }
    try {
      cr.auc = auc(s, l);
      auc_sum += cr.auc;
      ++auc_n;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AucUndefined) throw;
    }
    rep.total_time += cr.wall_time;
    rep.cohorts.push_back(cr);
  }
  if (auc_n > 0) rep.overall_auc = auc_sum / static_cast<double>(auc_n);

  std::vector<double> s;
  std::vector<int> l;
  for (const auto& o : outcomes) {
    s.push_back(o.score);
    l.push_back(o.label);
  }
  try {
    if (!outcomes.empty()) rep.pooled_auc = auc(s, l);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AucUndefined) throw;
  }
  rep.outcomes = std::move(outcomes);
  return rep;
}

/// Scores every held-out patient under one strategy. Per-cohort AUC groups
/// patients by their true cohort for every strategy.
inline StrategyReport run_strategy(const Strategy& strategy, std::span<const PatientRecord> holdout,
                                   const StrategyContext& ctx) {
  if (strategy.kind == Strategy::Kind::Retrieval && ctx.retrieval == nullptr)
    throw Error(ErrorCode::InvalidArgument, "retrieval strategy needs a prepared index");
  if (strategy.kind == Strategy::Kind::Single && !ctx.registry.contains(strategy.model))
    throw Error(ErrorCode::UnknownModel, strategy.model.str());

  std::vector<PatientOutcome> outcomes;
  outcomes.reserve(holdout.size());
  for (const auto& record : holdout) {
    const auto start = std::chrono::steady_clock::now();
    PatientOutcome o;
    o.patient_id = record.patient_id;
    o.true_cohort = record.cohort;
    o.assigned_cohort = record.cohort;
    o.label = record.label;

    ModelId preferred;
    switch (strategy.kind) {
      case Strategy::Kind::Single:
        preferred = strategy.model;
        break;
      case Strategy::Kind::PerCohortBest:
        preferred = best_model(ctx.table, record.cohort, record, ctx.registry).model;
        break;
      case Strategy::Kind::Retrieval: {
        const auto& rs = *ctx.retrieval;
        o.assigned_cohort = retrieve_cohort(rs.index, record, rs.stats, rs.fusion, rs.k).cohort;
        preferred = select_model(ctx.backend, record, o.assigned_cohort, ctx.table, ctx.registry, ctx.select_options).model;
        break;
      }
    }
    const double overhead = detail::seconds_since(start);
    auto [model, out] = detail::score_with_fallback(preferred, o.assigned_cohort, record, ctx, o.substituted);
    o.model = model;
    o.score = out.probability;
    o.wall_time = overhead + out.wall_time;
    outcomes.push_back(std::move(o));
  }
  return summarize(strategy.name(), std::move(outcomes));
}

/// Top-1 cohort accuracy of majority-vote retrieval for the held-out set.
inline ConfusionMatrix retrieval_confusion(const RetrievalSetup& setup, std::span<const PatientRecord> holdout,
                                           std::span<const CohortId> order = {}) {
  std::vector<FusedVector> queries;
  queries.reserve(holdout.size());
  for (const auto& r : holdout) queries.push_back(fuse(r, setup.stats, setup.fusion));
  const auto neighbors = setup.index.search_batch(queries, setup.k);
  std::vector<std::pair<CohortId, CohortId>> pairs;
  for (std::size_t i = 0; i < holdout.size(); ++i) pairs.emplace_back(holdout[i].cohort, majority_vote(neighbors[i]).cohort);
  return confusion(pairs, order);
}

// ---------------------------------------------------------------- bootstrap

/// Type-7 (linear interpolation) quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  if (sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct DeltaInterval {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
  std::size_t cohorts = 0;
};

/// Mean per-cohort AUC difference (a - b) with a percentile interval from
/// resampling cohorts with replacement.
inline DeltaInterval bootstrap_delta_auc(const StrategyReport& a, const StrategyReport& b,
                                         std::size_t n_resamples = 1000, double level = 0.95,
                                         std::uint64_t seed = 20250101) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must lie in (0,1)");
  if (a.cohorts.size() != b.cohorts.size())
    throw Error(ErrorCode::InvalidArgument, "reports cover different cohort sets");
  std::vector<double> deltas;
  for (std::size_t i = 0; i < a.cohorts.size(); ++i) {
    if (a.cohorts[i].cohort != b.cohorts[i].cohort)
      throw Error(ErrorCode::InvalidArgument, "reports cover different cohort sets");
    if (std::isnan(a.cohorts[i].auc) || std::isnan(b.cohorts[i].auc)) continue;
    deltas.push_back(a.cohorts[i].auc - b.cohorts[i].auc);
  }
  if (deltas.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 cohorts with defined AUC");

  DeltaInterval out;
  out.cohorts = deltas.size();
  out.mean = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(deltas.size());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, deltas.size() - 1);
  std::vector<double> means(n_resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < deltas.size(); ++i) s += deltas[pick(rng)];
    m = s / static_cast<double>(deltas.size());
  }
  std::sort(means.begin(), means.end());
  out.low = quantile_sorted(means, (1.0 - level) / 2.0);
  out.high = quantile_sorted(means, 1.0 - (1.0 - level) / 2.0);
  return out;
}

enum class OverallStatistic { CohortMean, Pooled };

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Patient-level bootstrap of a report's overall AUC. Patients are
/// resampled within their true cohort; a single-class draw is redrawn, at
/// most 10 attempts per resample.
inline Interval overall_auc_ci(const StrategyReport& report, double level = 0.975, std::size_t n_resamples = 1000,
                               std::uint64_t seed = 20250101,
                               OverallStatistic statistic = OverallStatistic::CohortMean) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must lie in (0,1)");
  std::map<CohortId, std::vector<const PatientOutcome*>> groups;
  for (const auto& o : report.outcomes) groups[o.true_cohort].push_back(&o);
  std::vector<std::vector<const PatientOutcome*>> cohorts;
  for (auto& [c, members] : groups) {
    bool pos = false, neg = false;
    for (const auto* o : members) (o->label == 1 ? pos : neg) = true;
    if (pos && neg) cohorts.push_back(std::move(members));
  }
  if (cohorts.empty()) throw Error(ErrorCode::AucUndefined, "no cohort with both classes");

  std::mt19937_64 rng(seed);
  std::vector<double> stats;
  stats.reserve(n_resamples);
  std::vector<double> s_all, s;
  std::vector<int> l_all, l;
  for (std::size_t b = 0; b < n_resamples; ++b) {
    double sum = 0.0;
    s_all.clear();
    l_all.clear();
    for (const auto& members : cohorts) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      bool drawn = false;
      for (int attempt = 0; attempt < 10 && !drawn; ++attempt) {
        s.clear();
        l.clear();
        for (std::size_t i = 0; i < members.size(); ++i) {
          const auto* o = members[pick(rng)];
          s.push_back(o->score);
          l.push_back(o->label);
        }
        drawn = std::find(l.begin(), l.end(), 1) != l.end() && std::find(l.begin(), l.end(), 0) != l.end();
      }
      if (!drawn) throw Error(ErrorCode::AucUndefined, "resample stayed single-class after 10 attempts");
      if (statistic == OverallStatistic::CohortMean) {
        sum += auc(s, l);
      } else {
        s_all.insert(s_all.end(), s.begin(), s.end());
        l_all.insert(l_all.end(), l.begin(), l.end());
      }
    }
    stats.push_back(statistic == OverallStatistic::CohortMean ? sum / static_cast<double>(cohorts.size())
                                                               : auc(s_all, l_all));
  }
  std::sort(stats.begin(), stats.end());
  return {quantile_sorted(stats, (1.0 - level) / 2.0), quantile_sorted(stats, 1.0 - (1.0 - level) / 2.0)};
}

}  // namespace cohort_agent
