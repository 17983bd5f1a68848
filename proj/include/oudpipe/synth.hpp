#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oudpipe/claims.hpp"
#include "oudpipe/cohort.hpp"
#include "oudpipe/featurize.hpp"
#include "oudpipe/models.hpp"

namespace oudpipe {

struct PlantedEffect {
  std::string feature;  // catalog name, e.g. "chronic_moderate" or "dx_30490"
  double log_odds = 0;
};

struct InteractionEffect {
  std::string feature_a, feature_b;
  double log_odds = 0;
};

struct GeneratorConfig {
  std::size_t n_patients = 0;
  std::uint64_t seed = 1;
  double target_oud_prevalence = 0.01;
  double male_fraction = 0.4451;
  // under-18, 18-25, 26-35, 36-55, 56-64, 65+ (study-sample shares)
  std::array<double, 6> age_fractions = {0.0694, 0.1175, 0.1528, 0.3561, 0.1821, 0.122};
  // non, less, moderate, high chronic
  std::array<double, 4> chronicity_fractions = {0.70, 0.15, 0.09, 0.06};

  struct DxFeature {
    std::string code;          // normalized ICD-9, becomes column "dx_<code>"
    double prevalence = 0.05;  // latent indicator probability
    double extra_count_mean = 0.3;  // count = 1 + Poisson(mean) when the indicator fires
  };
  std::vector<DxFeature> dx_features;

  std::vector<PlantedEffect> planted_effects;
  std::vector<InteractionEffect> interaction_effects;

  std::vector<std::string> opioid_ndcs = {"00000000001"};
  Date study_start = make_date(2011, 1, 1);
  Date study_end = make_date(2014, 12, 31);
  StudyWindows windows;

  void validate() const {
    if (!(target_oud_prevalence > 0 && target_oud_prevalence < 1))
      throw std::invalid_argument("prevalence must be in (0,1)");
    if (!(male_fraction >= 0 && male_fraction <= 1))
      throw std::invalid_argument("male_fraction must be in [0,1]");
    auto check = [](const auto& arr, const char* what) {
      double sum = 0;
      for (double v : arr) {
        if (v < 0) throw std::invalid_argument(std::string(what) + " fractions must be non-negative");
        sum += v;
      }
      if (sum <= 0) throw std::invalid_argument(std::string(what) + " fractions must sum above zero");
    };
    check(age_fractions, "age");
    check(chronicity_fractions, "chronicity");
    for (const auto& d : dx_features)
      if (!(d.prevalence >= 0 && d.prevalence <= 1))
        throw std::invalid_argument("dx prevalence must be in [0,1]");
    if (opioid_ndcs.empty()) throw std::invalid_argument("need at least one opioid NDC");
    const OutcomeCodeSet outcomes;
    for (const auto& d : dx_features)
      if (outcomes.contains(d.code))
        throw std::invalid_argument("dx feature " + d.code + " is an outcome code");
    if (study_start + windows.lookback_days + windows.follow_up_end_days > study_end)
      throw std::invalid_argument("study window too short for lookback + follow-up");
  }
};

struct GroundTruthRow {
  PatientId patient;
  double probability = 0;
  Label label = Label::NOUD;
};

struct GroundTruth {
  std::vector<GroundTruthRow> rows;
  double intercept = 0;
  nlohmann::json planted_model;
};

struct SynthResult {
  std::vector<PharmacyClaim> pharmacy;
  std::vector<MedicalClaim> medical;
  std::vector<EligibilityRecord> eligibility;
  GroundTruth truth;
};

namespace detail {

struct LatentPatient {
  bool male = false;
  int age = 0;
  AgeBucket age_bucket = AgeBucket::A36_55;
  ChronicityLevel chronicity = ChronicityLevel::NonChronic;
  std::vector<int> dx_counts;  // parallel to config.dx_features
};

inline double feature_value(const LatentPatient& p, const GeneratorConfig& cfg,
                            const std::string& name) {
  if (name == "gender_male") return p.male ? 1.0 : 0.0;
  if (name.rfind("age_", 0) == 0)
    return name == age_bucket_feature(p.age_bucket) ? 1.0 : 0.0;
  if (name.rfind("chronic_", 0) == 0)
    return name == chronicity_feature(p.chronicity) ? 1.0 : 0.0;
  if (name.rfind("dx_", 0) == 0) {
    const std::string code = name.substr(3);
    for (std::size_t i = 0; i < cfg.dx_features.size(); ++i)
      if (cfg.dx_features[i].code == code) return p.dx_counts[i];
    throw std::invalid_argument("planted effect references unknown dx feature: " + name);
  }
  throw std::invalid_argument("planted effect references unknown feature: " + name);
}

inline double linear_term(const LatentPatient& p, const GeneratorConfig& cfg) {
  double z = 0;
  for (const auto& e : cfg.planted_effects) z += e.log_odds * feature_value(p, cfg, e.feature);
  for (const auto& e : cfg.interaction_effects)
    z += e.log_odds * feature_value(p, cfg, e.feature_a) * feature_value(p, cfg, e.feature_b);
  return z;
}

template <std::size_t N>
inline std::size_t draw_category(const std::array<double, N>& fractions, std::mt19937_64& rng) {
  double sum = 0;
  for (double v : fractions) sum += v;
  std::uniform_real_distribution<double> u(0.0, sum);
  double x = u(rng);
  for (std::size_t i = 0; i < N; ++i) {
    x -= fractions[i];
    if (x <= 0) return i;
  }
  return N - 1;
}

inline LatentPatient draw_latent(const GeneratorConfig& cfg, std::mt19937_64& rng) {
  LatentPatient p;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.male = u(rng) < cfg.male_fraction;
  static constexpr std::array<AgeBucket, 6> kBuckets = {AgeBucket::Under18, AgeBucket::A18_25,
                                                        AgeBucket::A26_35, AgeBucket::A36_55,
                                                        AgeBucket::A56_64, AgeBucket::A65Plus};
  static constexpr std::array<std::pair<int, int>, 6> kAgeRange = {
      {{8, 17}, {18, 25}, {26, 35}, {36, 55}, {56, 64}, {65, 85}}};
  const std::size_t ab = draw_category(cfg.age_fractions, rng);
  p.age_bucket = kBuckets[ab];
  std::uniform_int_distribution<int> age_d(kAgeRange[ab].first, kAgeRange[ab].second);
  p.age = age_d(rng);
  static constexpr std::array<ChronicityLevel, 4> kLevels = {
      ChronicityLevel::NonChronic, ChronicityLevel::LessChronic, ChronicityLevel::ModerateChronic,
      ChronicityLevel::HighChronic};
  p.chronicity = kLevels[draw_category(cfg.chronicity_fractions, rng)];
  p.dx_counts.resize(cfg.dx_features.size(), 0);
  for (std::size_t i = 0; i < cfg.dx_features.size(); ++i) {
    if (u(rng) < cfg.dx_features[i].prevalence) {
      std::poisson_distribution<int> extra(cfg.dx_features[i].extra_count_mean);
      p.dx_counts[i] = 1 + extra(rng);
    }
  }
  return p;
}

}  // namespace detail

/// Bisects the intercept so the mean planted probability hits the target
/// prevalence within 1e-3. Throws when the effects saturate the target away.
inline double calibrate_intercept(const GeneratorConfig& cfg,
                                  const std::vector<double>* precomputed_linear = nullptr) {
  cfg.validate();
  std::vector<double> lin;
  if (precomputed_linear) {
    lin = *precomputed_linear;
  } else {
    const std::size_t n = std::max<std::size_t>(1, std::min<std::size_t>(cfg.n_patients, 200000));
    lin.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::mt19937_64 rng(detail::mix_seed(cfg.seed, i));
      lin.push_back(detail::linear_term(detail::draw_latent(cfg, rng), cfg));
    }
  }
  auto mean_prob = [&](double b) {
    double s = 0;
    for (double z : lin) s += sigmoid(b + z);
    return s / lin.size();
  };
  double lo = -50, hi = 50;
  const double tol = 1e-3;
  if (mean_prob(lo) > cfg.target_oud_prevalence + tol || mean_prob(hi) < cfg.target_oud_prevalence - tol)
    throw std::runtime_error("target prevalence unattainable with the planted effects");
  for (int it = 0; it < 200; ++it) {
    const double mid = (lo + hi) / 2;
    if (mean_prob(mid) < cfg.target_oud_prevalence)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12) break;
  }
  const double b = (lo + hi) / 2;
  if (std::abs(mean_prob(b) - cfg.target_oud_prevalence) > tol)
    throw std::runtime_error("intercept calibration did not converge");
  return b;
}

/// Deterministic population synthesis: every patient is opioid-naive by
/// construction, features are planted in engineered-feature space and translated
/// back into claims, OUD labels trigger follow-up outcome claims.
inline SynthResult generate(const GeneratorConfig& cfg) {
  cfg.validate();
  SynthResult out;
  out.truth.planted_model["target_prevalence"] = cfg.target_oud_prevalence;
  {
    nlohmann::json effects = nlohmann::json::array();
    for (const auto& e : cfg.planted_effects)
      effects.push_back({{"feature", e.feature}, {"log_odds", e.log_odds}});
    out.truth.planted_model["effects"] = effects;
    nlohmann::json inter = nlohmann::json::array();
    for (const auto& e : cfg.interaction_effects)
      inter.push_back({{"feature_a", e.feature_a}, {"feature_b", e.feature_b}, {"log_odds", e.log_odds}});
    out.truth.planted_model["interactions"] = inter;
  }
  if (cfg.n_patients == 0) {
    out.truth.intercept = 0;
    out.truth.planted_model["intercept"] = 0;
    return out;
  }

  std::vector<detail::LatentPatient> latents;
  latents.reserve(cfg.n_patients);
  std::vector<double> lin(cfg.n_patients);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, i));
    latents.push_back(detail::draw_latent(cfg, rng));
    lin[i] = detail::linear_term(latents.back(), cfg);
  }
  const double intercept = calibrate_intercept(cfg, &lin);
  out.truth.intercept = intercept;
  out.truth.planted_model["intercept"] = intercept;

  const Date index_lo = cfg.study_start + cfg.windows.lookback_days;
  const Date index_hi = cfg.study_end - cfg.windows.follow_up_end_days;
  static const std::vector<std::string>& outcome_codes = OutcomeCodeSet::default_codes();

  char idbuf[32];
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    std::snprintf(idbuf, sizeof(idbuf), "P%07zu", i);
    const PatientId pid = idbuf;
    const auto& lat = latents[i];
    // Independent stream for labels and claim placement.
    std::mt19937_64 rng(detail::mix_seed(cfg.seed ^ 0x5eed5eedull, i));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const double prob = sigmoid(intercept + lin[i]);
    const Label label = u(rng) < prob ? Label::OUD : Label::NOUD;
    out.truth.rows.push_back({pid, prob, label});

    std::uniform_int_distribution<Date> index_d(index_lo, index_hi);
    const Date index = index_d(rng);

    // Opioid supply pattern matching the latent chronicity band.
    int lo_days = 0, hi_days = 0;
    switch (lat.chronicity) {
      case ChronicityLevel::NonChronic: lo_days = 10; hi_days = 60; break;
      case ChronicityLevel::LessChronic: lo_days = 80; hi_days = 175; break;
      case ChronicityLevel::ModerateChronic: lo_days = 190; hi_days = 285; break;
      case ChronicityLevel::HighChronic: lo_days = 295; hi_days = 365; break;
    }
    std::uniform_int_distribution<int> cover_d(lo_days, hi_days);
    int remaining = cover_d(rng);
    Date fill = index;
    std::uniform_int_distribution<std::size_t> ndc_d(0, cfg.opioid_ndcs.size() - 1);
    while (remaining > 0) {
      const int supply = std::min(remaining, 30);
      out.pharmacy.push_back({pid, fill, cfg.opioid_ndcs[ndc_d(rng)], supply, true});
      fill += supply;
      remaining -= supply;
    }

    std::vector<MedicalClaim> med;
    const Date hist_lo = index - cfg.windows.lookback_days;
    const Date hist_hi = index + cfg.windows.usage_window_days;
    std::uniform_int_distribution<Date> hist_d(hist_lo, hist_hi);
    for (std::size_t f = 0; f < cfg.dx_features.size(); ++f)
      for (int c = 0; c < lat.dx_counts[f]; ++c)
        med.push_back({pid, hist_d(rng), cfg.dx_features[f].code});

    if (label == Label::OUD) {
      std::uniform_int_distribution<Date> fup_d(index + cfg.windows.follow_up_start_days + 1,
                                                index + cfg.windows.follow_up_end_days);
      std::uniform_int_distribution<std::size_t> code_d(0, outcome_codes.size() - 1);
      const Date first = fup_d(rng);
      med.push_back({pid, first, outcome_codes[code_d(rng)]});
      if (u(rng) < 0.5 && first < index + cfg.windows.follow_up_end_days) {
        std::uniform_int_distribution<Date> again_d(first, index + cfg.windows.follow_up_end_days);
        med.push_back({pid, again_d(rng), outcome_codes[code_d(rng)]});
      }
    }
    std::stable_sort(med.begin(), med.end(),
                     [](const MedicalClaim& a, const MedicalClaim& b) { return a.service_date < b.service_date; });
    out.medical.insert(out.medical.end(), med.begin(), med.end());

    EligibilityRecord elig;
    elig.patient = pid;
    elig.age = lat.age;
    elig.gender = lat.male ? Gender::Male : Gender::Female;
    std::uniform_int_distribution<int> zip_d(1000, 2799);
    char zipbuf[8];
    std::snprintf(zipbuf, sizeof(zipbuf), "0%04d", zip_d(rng));
    elig.zip = zipbuf;
    out.eligibility.push_back(elig);
  }
  return out;
}

inline void write_ground_truth(const GroundTruth& truth, std::ostream& out) {
  out << "patient_id,true_probability,label\n";
  for (const auto& r : truth.rows)
    out << r.patient << "," << fmt_double(r.probability) << "," << label_name(r.label) << "\n";
}

}  // namespace oudpipe
