#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cohort_agent/policy.hpp"

namespace cohort_agent {

struct NumericDist {
  double mean = 0.0;
  double sd = 1.0;
  double missing_rate = 0.0;
  bool binary = false;  // Bernoulli(mean) instead of Normal(mean, sd)
  double lower = -1e300;
  double upper = 1e300;
};

struct CohortSpec {
  CohortId name;
  std::size_t n_patients = 100;
  std::map<std::string, NumericDist> numeric;
  std::map<std::string, std::vector<std::pair<std::string, double>>> categorical;
  std::vector<float> feature_centroid = std::vector<float>(kFeatureRows * kFeatureCols, 0.0f);
  double feature_noise_sd = 1.0;
  double prevalence = 0.3;
  std::map<ModelId, double> model_auc_profile;
  std::vector<double> timepoint_weights = {1.0};  // weight of 1, 2, ... timepoints
};

struct SyntheticDataset {
  MetadataSchema schema;
  std::vector<PatientRecord> records;
  PerformanceTable table;
};

inline void check_spec(const CohortSpec& s) {
  auto bad = [&](const std::string& why) { throw Error(ErrorCode::InvalidArgument, s.name.str() + ": " + why); };
  if (s.name.empty()) bad("empty cohort name");
  if (s.n_patients < 4) bad("needs at least 4 patients");
  if (!(s.prevalence > 0.0 && s.prevalence < 1.0)) bad("prevalence must lie in (0,1)");
  const double n = static_cast<double>(s.n_patients);
  if (n * s.prevalence < 1.0 || n * (1.0 - s.prevalence) < 1.0) bad("expected class counts below 1");
  if (s.feature_centroid.size() != kFeatureRows * kFeatureCols) bad("centroid must be 5x128");
  if (!(s.feature_noise_sd >= 0.0)) bad("negative feature noise");
  if (s.timepoint_weights.empty() ||
      std::none_of(s.timepoint_weights.begin(), s.timepoint_weights.end(), [](double w) { return w > 0.0; }))
    bad("timepoint weights need a positive entry");
  for (const auto& [m, a] : s.model_auc_profile)
    if (!(a > 0.0 && a < 1.0)) bad("target AUC for " + m.str() + " outside (0,1)");
  for (const auto& [f, dist] : s.categorical)
    if (dist.empty()) bad("categorical field '" + f + "' has no categories");
}

/// Samples every cohort from one seeded stream, in spec order.
inline SyntheticDataset generate(const std::vector<CohortSpec>& specs, std::uint64_t seed) {
  if (specs.empty()) throw Error(ErrorCode::EmptyInput, "no cohort specs");
  std::set<CohortId> names;
  for (const auto& s : specs) {
    check_spec(s);
    if (!names.insert(s.name).second) throw Error(ErrorCode::DuplicateId, "cohort " + s.name.str());
  }

  SyntheticDataset out;
  for (const auto& s : specs) {
    out.schema.cohorts.push_back(s.name);
    for (const auto& [name, dist] : s.numeric) {
      FieldSpec* f = nullptr;
      for (auto& existing : out.schema.fields)
        if (existing.name == name) f = &existing;
      if (f == nullptr) {
        out.schema.fields.push_back({name, FieldKind::Numeric, {}, "", false});
        f = &out.schema.fields.back();
      }
      f->missing_indicator = f->missing_indicator || dist.missing_rate > 0.0;
    }
    for (const auto& [name, dist] : s.categorical) {
      FieldSpec* f = nullptr;
      for (auto& existing : out.schema.fields)
        if (existing.name == name) f = &existing;
      if (f == nullptr) {
        out.schema.fields.push_back({name, FieldKind::Categorical, {}, "", false});
        f = &out.schema.fields.back();
      }
      for (const auto& [cat, p] : dist)
        if (std::find(f->categories.begin(), f->categories.end(), cat) == f->categories.end())
          f->categories.push_back(cat);
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& s : specs) {
    std::discrete_distribution<int> timepoints(s.timepoint_weights.begin(), s.timepoint_weights.end());
    std::map<std::string, std::discrete_distribution<std::size_t>> cats;
    for (const auto& [name, dist] : s.categorical) {
      std::vector<double> w;
      for (const auto& [cat, p] : dist) w.push_back(p);
      cats.emplace(name, std::discrete_distribution<std::size_t>(w.begin(), w.end()));
    }
    for (std::size_t i = 0; i < s.n_patients; ++i) {
      PatientRecord r;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05zu", s.name.str().c_str(), i);
      r.patient_id = id;
      r.cohort = s.name;
      for (const auto& [name, dist] : s.numeric) {
        if (dist.missing_rate > 0.0 && unit(rng) < dist.missing_rate) {
          r.metadata[name] = std::monostate{};
          continue;
        }
        double v = dist.binary ? (unit(rng) < dist.mean ? 1.0 : 0.0) : dist.mean + dist.sd * normal(rng);
        r.metadata[name] = std::clamp(v, dist.lower, dist.upper);
      }
      for (const auto& [name, dist] : s.categorical) r.metadata[name] = dist[cats.at(name)(rng)].first;
      for (std::size_t j = 0; j < r.features.values.size(); ++j)
        r.features.values[j] = static_cast<float>(s.feature_centroid[j] + s.feature_noise_sd * normal(rng));
      r.label = unit(rng) < s.prevalence ? 1 : 0;
      r.timepoints = timepoints(rng) + 1;
      out.records.push_back(std::move(r));
    }
    for (const auto& [model, target] : s.model_auc_profile) out.table.set(s.name, model, {target, true});
  }
  return out;
}

namespace detail {

inline std::vector<float> row_constant_centroid(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> c(kFeatureRows * kFeatureCols);
  for (std::size_t j = 0; j < kFeatureCols; ++j) {
    const auto v = static_cast<float>(scale * normal(rng));
    for (std::size_t r = 0; r < kFeatureRows; ++r) c[r * kFeatureCols + j] = v;
  }
  return c;
}

/// Adds the same random offset to every row.
inline std::vector<float> perturb_rows(const std::vector<float>& base, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> c = base;
  for (std::size_t j = 0; j < kFeatureCols; ++j) {
    const double d = scale * normal(rng);
    for (std::size_t r = 0; r < kFeatureRows; ++r) c[r * kFeatureCols + j] = static_cast<float>(c[r * kFeatureCols + j] + d);
  }
  return c;
}

}  // namespace detail

/// Two cohorts with identical metadata distributions whose feature centroids
/// differ by `separation` noise standard deviations in every coordinate
/// (random sign per coordinate). Model profiles are mirrored so routing to
/// the wrong cohort costs AUC.
inline std::vector<CohortSpec> two_cohort_specs(double separation, std::size_t n_per_cohort = 200,
                                                std::uint64_t layout_seed = 7) {
  std::mt19937_64 rng(layout_seed);
  std::bernoulli_distribution coin(0.5);
  const double noise = 1.0;
  std::vector<float> base(kFeatureRows * kFeatureCols, 0.0f);
  std::vector<float> shifted(base.size());
  for (std::size_t j = 0; j < shifted.size(); ++j)
    shifted[j] = static_cast<float>((coin(rng) ? 1.0 : -1.0) * separation * noise);

  auto make = [&](const char* name, std::vector<float> centroid, double auc_m1, double auc_m2) {
    CohortSpec s;
    s.name = CohortId(name);
    s.n_patients = n_per_cohort;
    s.numeric["age"] = {62.0, 8.0};
    s.numeric["bmi"] = {27.0, 4.5};
    s.categorical["gender"] = {{"female", 0.45}, {"male", 0.55}};
    s.categorical["smoking_status"] = {{"current", 0.4}, {"former", 0.45}, {"never", 0.15}};
    s.feature_centroid = std::move(centroid);
    s.feature_noise_sd = noise;
    s.prevalence = 0.4;
    s.model_auc_profile = {{ModelId("M1"), auc_m1}, {ModelId("M2"), auc_m2}};
    return s;
  };
  return {make("COHORT_A", base, 0.90, 0.62), make("COHORT_B", shifted, 0.60, 0.88)};
}

/// Nine lung-screening style cohorts: sizes in [104, 868] summing to 3750
/// (so a 0.3 holdout leaves about 1123 patients), with fixed DLI/DLS/Sybil
/// AUC profiles per cohort. Separability is tiered: BRONCH and VLSP are
/// distinct, the four MCL sites overlap, the two NLST subsets nearly
/// coincide, and LI-VUMC sits close to NLST.
inline std::vector<CohortSpec> mimic_specs() {
  struct Row {
    const char* name;
    std::size_t n;
    double dli, dls, sybil;
    double prevalence;
  };
  const Row rows[] = {
      {"BRONCH", 363, 0.609, 0.643, 0.657, 0.55},
      {"MCL_VUMC", 273, 0.827, 0.765, 0.829, 0.45},
      {"MCL_UPMC", 104, 0.983, 0.880, 0.923, 0.45},
      {"MCL_DECAMP", 120, 0.738, 0.753, 0.654, 0.45},
      {"MCL_UCD", 107, 0.938, 0.805, 0.801, 0.45},
      {"VLSP", 863, 0.510, 0.811, 0.783, 0.15},
      {"LI-VUMC", 203, 0.824, 0.545, 0.725, 0.35},
      {"NLST_test_nodule", 850, 0.545, 0.627, 0.853, 0.25},
      {"NLST_test", 867, 0.534, 0.634, 0.838, 0.15},
  };

  // Centroids repeat one 128-vector across the five rows, so pooling keeps
  // the full between-cohort offset.
  std::mt19937_64 rng(1729);
  const double noise = 1.0;
  // Per-coordinate offsets from the group base; picked so top-1 accuracy
  // lands near 0.9 with most errors inside the MCL and NLST groups.
  constexpr double kMclSpread = 1.5, kUpmcSpread = 0.7, kLiSpread = 1.8, kNlstSpread = 0.05;
  const auto bronch = detail::row_constant_centroid(rng, 4.0);
  const auto vlsp = detail::row_constant_centroid(rng, 4.0);
  const auto mcl = detail::row_constant_centroid(rng, 4.0);
  const auto nlst = detail::row_constant_centroid(rng, 4.0);
  const auto vumc = detail::perturb_rows(mcl, rng, kMclSpread);
  std::map<std::string, std::vector<float>> centroid = {
      {"BRONCH", bronch},
      {"VLSP", vlsp},
      {"MCL_VUMC", vumc},
      {"MCL_UPMC", detail::perturb_rows(vumc, rng, kUpmcSpread)},
      {"MCL_DECAMP", detail::perturb_rows(mcl, rng, kMclSpread)},
      {"MCL_UCD", detail::perturb_rows(mcl, rng, kMclSpread)},
      {"LI-VUMC", detail::perturb_rows(nlst, rng, kLiSpread)},
      {"NLST_test_nodule", detail::perturb_rows(nlst, rng, kNlstSpread)},
      {"NLST_test", detail::perturb_rows(nlst, rng, kNlstSpread)},
  };

  // Metadata means per cohort: age, bmi, pack_years, nodule size (NaN means
  // mostly unavailable), P(female), P(current smoker), P(former smoker).
  struct Meta {
    double age, bmi, pack_years, nodule_mm, female, current, former;
  };
  const std::map<std::string, Meta> meta = {
      {"BRONCH", {66, 28.5, 45, 24, 0.45, 0.30, 0.55}},
      {"MCL_VUMC", {64, 27.5, 40, 15, 0.50, 0.35, 0.45}},
      {"MCL_UPMC", {64, 27.0, 42, 14, 0.48, 0.36, 0.46}},
      {"MCL_DECAMP", {65, 27.2, 41, 16, 0.46, 0.34, 0.48}},
      {"MCL_UCD", {63, 27.8, 39, 15, 0.50, 0.33, 0.47}},
      {"VLSP", {61, 29.5, 52, std::nan(""), 0.48, 0.55, 0.45}},
      {"LI-VUMC", {63, 28.0, 48, 11, 0.47, 0.50, 0.45}},
      {"NLST_test_nodule", {62, 27.8, 55, 9, 0.41, 0.48, 0.52}},
      {"NLST_test", {61.5, 27.9, 55, std::nan(""), 0.41, 0.48, 0.52}},
  };

  std::vector<CohortSpec> out;
  for (const auto& row : rows) {
    const auto& m = meta.at(row.name);
    CohortSpec s;
    s.name = CohortId(row.name);
    s.n_patients = row.n;
    s.numeric["age"] = {m.age, 6.5, 0.0, false, 40.0, 90.0};
    s.numeric["bmi"] = {m.bmi, 5.0, 0.02, false, 14.0, 60.0};
    s.numeric["pack_years"] = {m.pack_years, 18.0, 0.05, false, 0.0, 200.0};
    if (std::isnan(m.nodule_mm)) {
      s.numeric["nodule_size_mm"] = {8.0, 3.0, 0.9, false, 2.0, 60.0};
    } else {
      s.numeric["nodule_size_mm"] = {m.nodule_mm, 6.0, 0.1, false, 2.0, 60.0};
    }
    s.numeric["spiculation"] = {0.25, 0.0, 0.1, true};
    s.numeric["upper_lobe"] = {0.6, 0.0, 0.1, true};
    s.numeric["cancer_history"] = {0.15, 0.0, 0.0, true};
    s.categorical["gender"] = {{"female", m.female}, {"male", 1.0 - m.female}};
    s.categorical["smoking_status"] = {
        {"current", m.current}, {"former", m.former}, {"never", std::max(0.0, 1.0 - m.current - m.former)}};
    s.feature_centroid = centroid.at(row.name);
    s.feature_noise_sd = noise;
    s.prevalence = row.prevalence;
    s.model_auc_profile = {{ModelId("DLI"), row.dli}, {ModelId("DLS"), row.dls}, {ModelId("Sybil"), row.sybil}};
    // Longitudinal cohorts more often carry a second scan.
    const bool longitudinal = std::string(row.name) == "LI-VUMC" || std::string(row.name).rfind("NLST", 0) == 0;
    s.timepoint_weights = longitudinal ? std::vector<double>{0.4, 0.4, 0.2} : std::vector<double>{0.8, 0.2};
    out.push_back(std::move(s));
  }
  return out;
}


struct StubCost {
  ModelId model;
  double seconds_per_patient = 0.0;
  int min_timepoints = 1;
};

/// Rough per-patient costs (about 5 ms for DLI/DLS, about 12 s for Sybil).
/// Only the relative sizes matter: they make simulated wall time plausible.
inline std::vector<StubCost> default_stub_costs() {
  return {
      {ModelId("DLI"), 0.005, 1},   {ModelId("DLS"), 0.005, 1},  {ModelId("Sybil"), 12.4, 1},
      {ModelId("Liao"), 3.0, 1},    {ModelId("TD-ViT"), 1.5, 2}, {ModelId("DLSTM"), 0.8, 2},
  };
}

/// One binormal stub per listed model, with per-cohort targets taken from
/// the cohort specs' profiles. Models without any profile entry are still
/// registered; they are applicable to no cohort.
inline ModelRegistry stub_models(const std::vector<CohortSpec>& specs, std::uint64_t seed,
                                 const std::vector<StubCost>& models) {
  ModelRegistry reg;
  for (const auto& m : models) {
    ModelSpec spec;
    spec.id = m.model;
    spec.kind = ModelKind::BinormalStub;
    spec.requirements.min_timepoints = m.min_timepoints;
    spec.cost_per_patient = m.seconds_per_patient;
    spec.binormal.seed = seed;
    for (const auto& s : specs)
      if (auto it = s.model_auc_profile.find(m.model); it != s.model_auc_profile.end())
        spec.binormal.target_auc[s.name] = it->second;
    reg.add(std::move(spec));
  }
  return reg;
}

/// Stubs for every model named in any profile, at zero cost.
inline ModelRegistry stub_models(const std::vector<CohortSpec>& specs, std::uint64_t seed) {
  std::set<ModelId> ids;
  for (const auto& s : specs)
    for (const auto& [m, a] : s.model_auc_profile) ids.insert(m);
  std::vector<StubCost> models;
  for (const auto& id : ids) models.push_back({id, 0.0, 1});
  return stub_models(specs, seed, models);
}

}  // namespace cohort_agent
