#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "oudpipe/cohort.hpp"
#include "oudpipe/matrix.hpp"

namespace oudpipe {

enum class AgeBucket { Under18, A18_25, A26_35, A36_55, A56_64, A65Plus };

inline AgeBucket bucket_for_age(int age) {
  if (age < 0) throw std::invalid_argument("negative age");
  if (age < 18) return AgeBucket::Under18;
  if (age <= 25) return AgeBucket::A18_25;
  if (age <= 35) return AgeBucket::A26_35;
  if (age <= 55) return AgeBucket::A36_55;
  if (age <= 64) return AgeBucket::A56_64;
  return AgeBucket::A65Plus;  // 65 exactly lands here
}

inline const char* age_bucket_feature(AgeBucket b) {
  switch (b) {
    case AgeBucket::Under18: return "age_under_18";
    case AgeBucket::A18_25: return "age_18_25";
    case AgeBucket::A26_35: return "age_26_35";
    case AgeBucket::A36_55: return "age_36_55";
    case AgeBucket::A56_64: return "age_56_64";
    case AgeBucket::A65Plus: return "age_65_plus";  // reference level, not a column
  }
  return "?";
}

enum class ChronicityLevel { NonChronic, LessChronic, ModerateChronic, HighChronic };

// Half-open PDC bands; the exact boundaries 0.20 / 0.50 / 0.80 belong to the upper band.
inline ChronicityLevel level_for_pdc(double pdc) {
  if (pdc < 0.20) return ChronicityLevel::NonChronic;
  if (pdc < 0.50) return ChronicityLevel::LessChronic;
  if (pdc < 0.80) return ChronicityLevel::ModerateChronic;
  return ChronicityLevel::HighChronic;
}

inline const char* chronicity_feature(ChronicityLevel l) {
  switch (l) {
    case ChronicityLevel::NonChronic: return "chronic_non";  // reference level, not a column
    case ChronicityLevel::LessChronic: return "chronic_less";
    case ChronicityLevel::ModerateChronic: return "chronic_moderate";
    case ChronicityLevel::HighChronic: return "chronic_high";
  }
  return "?";
}

/// Proportion of days covered over the year after the index fill.
/// Each fill covers [fill_date, fill_date + days_supply); overlaps count once;
/// coverage is truncated at index + horizon.
inline double compute_pdc(const std::vector<PharmacyClaim>& opioid_fills, Date index_date,
                          int horizon_days = 365) {
  std::vector<std::pair<Date, Date>> iv;  // [start, end)
  const Date window_end = index_date + horizon_days;
  for (const auto& f : opioid_fills) {
    if (!f.is_opioid) continue;
    Date start = std::max(f.fill_date, index_date);
    Date end = std::min<Date>(f.fill_date + f.days_supply, window_end);
    if (end > start) iv.emplace_back(start, end);
  }
  std::sort(iv.begin(), iv.end());
  long covered = 0;
  Date cur_start = 0, cur_end = 0;
  bool open = false;
  for (const auto& [s, e] : iv) {
    if (!open || s > cur_end) {
      if (open) covered += cur_end - cur_start;
      cur_start = s;
      cur_end = e;
      open = true;
    } else {
      cur_end = std::max(cur_end, e);
    }
  }
  if (open) covered += cur_end - cur_start;
  return static_cast<double>(covered) / horizon_days;
}

/// Mean age of NOUD patients, used to impute missing ages. The id filter lets the
/// caller restrict the mean to the training partition.
inline std::optional<double> mean_noud_age(const std::vector<CohortMember>& cohort,
                                           const std::unordered_map<PatientId, const EligibilityRecord*>& elig,
                                           const std::set<PatientId>* restrict_to = nullptr) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& m : cohort) {
    if (m.label != Label::NOUD) continue;
    if (restrict_to && !restrict_to->count(m.patient)) continue;
    auto it = elig.find(m.patient);
    if (it == elig.end() || !it->second->age) continue;
    sum += *it->second->age;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

/// Imputes missing age with the rounded NOUD mean, then buckets.
inline AgeBucket bucket_age(std::optional<int> age, double noud_mean_age) {
  if (!age) age = static_cast<int>(std::lround(noud_mean_age));
  return bucket_for_age(*age);
}

struct FeaturizeOptions {
  bool ablate_dependency_history = false;
  // Normalized ICD-9 prefixes whose dx columns the ablation drops (e.g. "304", "3055").
  std::vector<std::string> ablation_prefixes = {"304", "3055", "3059"};
  bool exclude_outcome_codes = true;
  std::set<PatientId> imputation_ids;  // empty -> all NOUD members
};

inline std::vector<std::string> load_ablation_prefixes(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto norm = normalize_icd9(line);
    out.push_back(norm ? *norm : line);
  }
  return out;
}

/// Diagnosis counts for one patient within [index - lookback, index + usage_window],
/// stopping at the censor date.
inline std::map<std::string, int> dx_counts(const std::vector<MedicalClaim>& patient_medical,
                                            const CohortMember& member, const StudyWindows& windows) {
  std::map<std::string, int> counts;
  const Date lo = member.index_date - windows.lookback_days;
  const Date hi = member.index_date + windows.usage_window_days;
  for (const auto& c : patient_medical) {
    if (c.service_date < lo || c.service_date > hi) continue;
    if (member.censor_date && c.service_date >= *member.censor_date) continue;
    ++counts[c.diagnosis];
  }
  return counts;
}

inline FeatureMatrix build_matrix(const std::vector<CohortMember>& cohort, const ClaimsBundle& bundle,
                                  const StudyWindows& windows, const FeaturizeOptions& opts = {},
                                  const OutcomeCodeSet& outcome_codes = OutcomeCodeSet{}) {
  if (cohort.empty()) throw std::invalid_argument("empty cohort");

  std::unordered_map<PatientId, const EligibilityRecord*> elig;
  for (const auto& e : bundle.eligibility) elig[e.patient] = &e;
  auto medical = detail::group_by_patient(bundle.medical);
  std::unordered_map<PatientId, std::vector<PharmacyClaim>> opioid_fills;
  for (const auto& c : bundle.pharmacy)
    if (c.is_opioid) opioid_fills[c.patient].push_back(c);

  auto matches_ablation = [&](const std::string& code) {
    for (const auto& p : opts.ablation_prefixes)
      if (code.rfind(p, 0) == 0) return true;
    return false;
  };

  // First pass: per-patient dx counts and the shared code vocabulary.
  std::vector<std::map<std::string, int>> per_patient_counts(cohort.size());
  std::set<std::string> vocab;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    static const std::vector<MedicalClaim> kEmpty;
    auto mit = medical.find(cohort[i].patient);
    per_patient_counts[i] = dx_counts(mit == medical.end() ? kEmpty : mit->second, cohort[i], windows);
    for (const auto& [code, _] : per_patient_counts[i]) {
      if (opts.exclude_outcome_codes && outcome_codes.contains(code)) continue;
      if (opts.ablate_dependency_history && matches_ablation(code)) continue;
      vocab.insert(code);
    }
  }

  const std::set<PatientId>* restrict_ids =
      opts.imputation_ids.empty() ? nullptr : &opts.imputation_ids;
  auto noud_mean = mean_noud_age(cohort, elig, restrict_ids);

  // Reference groups (female, age 65+, non-chronic) contribute no column.
  std::vector<std::pair<std::string, FeatureKind>> catalog = {
      {"age_18_25", FeatureKind::Demographic},   {"age_26_35", FeatureKind::Demographic},
      {"age_36_55", FeatureKind::Demographic},   {"age_56_64", FeatureKind::Demographic},
      {"age_under_18", FeatureKind::Demographic}, {"chronic_high", FeatureKind::Chronicity},
      {"chronic_less", FeatureKind::Chronicity}, {"chronic_moderate", FeatureKind::Chronicity},
      {"gender_male", FeatureKind::Demographic}};
  for (const auto& code : vocab) catalog.emplace_back("dx_" + code, FeatureKind::DxCount);
  std::sort(catalog.begin(), catalog.end());

  FeatureMatrix m;
  for (auto& [name, kind] : catalog) {
    m.feature_names.push_back(name);
    m.kinds.push_back(kind);
  }
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t c = 0; c < m.feature_names.size(); ++c) col_of[m.feature_names[c]] = c;

  m.values.assign(cohort.size() * m.feature_names.size(), 0.0);
  m.row_ids.reserve(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& member = cohort[i];
    m.row_ids.push_back(member.patient);
    m.labels.push_back(member.label);
    auto set = [&](const std::string& name, double v) {
      auto it = col_of.find(name);
      if (it != col_of.end()) m.at(i, it->second) = v;
    };
    auto eit = elig.find(member.patient);
    if (eit == elig.end()) throw std::runtime_error("cohort member lacks eligibility: " + member.patient);
    const auto* rec = eit->second;
    if (rec->gender == Gender::Male) set("gender_male", 1.0);
    std::optional<int> age = rec->age;
    if (!age && !noud_mean) throw std::runtime_error("cannot impute age: no NOUD ages available");
    const AgeBucket bucket = bucket_age(age, noud_mean.value_or(0.0));
    if (bucket != AgeBucket::A65Plus) set(age_bucket_feature(bucket), 1.0);

    static const std::vector<PharmacyClaim> kNoFills;
    auto fit = opioid_fills.find(member.patient);
    const double pdc = compute_pdc(fit == opioid_fills.end() ? kNoFills : fit->second, member.index_date);
    const ChronicityLevel level = level_for_pdc(pdc);
    if (level != ChronicityLevel::NonChronic) set(chronicity_feature(level), 1.0);

    for (const auto& [code, count] : per_patient_counts[i]) set("dx_" + code, count);
  }

  if (m.cols() == 0) throw std::runtime_error("feature matrix has zero columns");
  return m;
}

}  // namespace oudpipe
