#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "oudpipe/claims.hpp"

namespace oudpipe {

struct StudyWindows {
  int lookback_days = 365;          // history window before index
  int usage_window_days = 183;      // post-index usage observation
  int follow_up_start_days = 183;   // outcome labeling window (offsets after index]
  int follow_up_end_days = 365;

  void validate() const {
    if (lookback_days <= 0) throw std::invalid_argument("lookback must be positive");
    if (usage_window_days > follow_up_end_days)
      throw std::invalid_argument("usage window must not extend past follow-up end");
    if (follow_up_start_days > follow_up_end_days)
      throw std::invalid_argument("follow-up start must not exceed follow-up end");
  }
};

enum class Label { OUD, NOUD };

inline const char* label_name(Label l) { return l == Label::OUD ? "OUD" : "NOUD"; }

struct CohortMember {
  PatientId patient;
  Date index_date;
  Label label = Label::NOUD;
  std::optional<Date> censor_date;  // present iff label == OUD
};

/// ICD-9 codes that define opioid use disorder (normalized, no decimal point).
class OutcomeCodeSet {
 public:
  OutcomeCodeSet() : codes_(default_codes().begin(), default_codes().end()) {}
  explicit OutcomeCodeSet(std::vector<std::string> codes) : codes_(codes.begin(), codes.end()) {}

  static const std::vector<std::string>& default_codes() {
    static const std::vector<std::string> codes = {
        "30400", "30401", "30402", "30403", "30470", "30471", "30472", "30473",
        "30550", "30551", "30552", "30553", "96500", "96501", "96502", "96509",
        "E8500", "E8502", "E9350", "E9352"};
    return codes;
  }

  bool contains(const std::string& normalized) const { return codes_.count(normalized) > 0; }
  std::size_t size() const { return codes_.size(); }

 private:
  std::set<std::string> codes_;
};

enum class IndexMode {
  FirstClean,  // first opioid fill with a clean lookback (default)
  MostRecent   // most recent opioid fill, kept only if its lookback is clean
};

struct CohortOptions {
  IndexMode index_mode = IndexMode::FirstClean;
  // Outcome codes in (index, index + follow_up_start] exclude the patient instead of labeling.
  bool exclude_usage_window_outcomes = true;
  // When set, patients whose follow-up would extend past this date are excluded.
  std::optional<Date> study_end;
};

struct ExclusionTally {
  std::map<std::string, std::size_t> reasons;
  void bump(const std::string& reason) { ++reasons[reason]; }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : reasons) n += c;
    return n;
  }
};

struct CohortResult {
  std::vector<CohortMember> members;
  ExclusionTally exclusions;
};

namespace detail {

template <typename Claim>
std::unordered_map<PatientId, std::vector<Claim>> group_by_patient(const std::vector<Claim>& claims) {
  std::unordered_map<PatientId, std::vector<Claim>> g;
  for (const auto& c : claims) g[c.patient].push_back(c);
  return g;
}

}  // namespace detail

/// Picks the index prescription per patient: opioid fills only, clean lookback required.
/// Sorted fill dates in, so membership is independent of input row order.
inline std::optional<Date> choose_index(const std::vector<Date>& opioid_fill_dates,
                                        const StudyWindows& windows, IndexMode mode) {
  if (opioid_fill_dates.empty()) return std::nullopt;
  std::vector<Date> dates = opioid_fill_dates;
  std::sort(dates.begin(), dates.end());
  auto clean = [&](Date candidate) {
    for (Date d : dates)
      if (d >= candidate - windows.lookback_days && d < candidate) return false;
    return true;
  };
  if (mode == IndexMode::MostRecent) {
    const Date candidate = dates.back();
    if (clean(candidate)) return candidate;
    return std::nullopt;
  }
  for (Date candidate : dates)
    if (clean(candidate)) return candidate;
  return std::nullopt;
}

inline std::vector<std::pair<PatientId, Date>> identify_naive(const std::vector<PharmacyClaim>& pharmacy,
                                                              const StudyWindows& windows,
                                                              IndexMode mode = IndexMode::FirstClean) {
  std::unordered_map<PatientId, std::vector<Date>> fills;
  for (const auto& c : pharmacy)
    if (c.is_opioid) fills[c.patient].push_back(c.fill_date);
  std::vector<std::pair<PatientId, Date>> out;
  for (auto& [pid, dates] : fills)
    if (auto idx = choose_index(dates, windows, mode)) out.emplace_back(pid, *idx);
  std::sort(out.begin(), out.end());
  return out;
}

enum class OutcomeStatus { Labeled, ExcludedPreexisting, ExcludedUsageWindow };

struct OutcomeResult {
  OutcomeStatus status = OutcomeStatus::Labeled;
  CohortMember member;
};

/// Labels one candidate from their medical claims. Outcome codes at or before the
/// index contradict naivete and exclude the patient.
inline OutcomeResult label_outcome(const PatientId& patient, Date index_date,
                                   const std::vector<MedicalClaim>& patient_medical,
                                   const StudyWindows& windows, const OutcomeCodeSet& codes,
                                   const CohortOptions& opts = {}) {
  OutcomeResult res;
  res.member = {patient, index_date, Label::NOUD, std::nullopt};
  std::optional<Date> first_usage_window_hit;
  std::optional<Date> first_follow_up_hit;
  for (const auto& c : patient_medical) {
    if (!codes.contains(c.diagnosis)) continue;
    if (c.service_date <= index_date) {
      res.status = OutcomeStatus::ExcludedPreexisting;
      return res;
    }
    const int offset = c.service_date - index_date;
    if (opts.exclude_usage_window_outcomes && offset <= windows.follow_up_start_days) {
      if (!first_usage_window_hit || c.service_date < *first_usage_window_hit)
        first_usage_window_hit = c.service_date;
    } else if (offset <= windows.follow_up_end_days) {
      if (!first_follow_up_hit || c.service_date < *first_follow_up_hit)
        first_follow_up_hit = c.service_date;
    }
  }
  if (first_usage_window_hit) {
    res.status = OutcomeStatus::ExcludedUsageWindow;
    return res;
  }
  if (first_follow_up_hit) {
    res.member.label = Label::OUD;
    res.member.censor_date = first_follow_up_hit;
  }
  return res;
}

inline CohortResult build_cohort(const ClaimsBundle& bundle, const StudyWindows& windows,
                                 const OutcomeCodeSet& codes, const CohortOptions& opts = {}) {
  windows.validate();
  CohortResult result;

  std::unordered_map<PatientId, const EligibilityRecord*> elig;
  for (const auto& e : bundle.eligibility) elig[e.patient] = &e;
  auto medical = detail::group_by_patient(bundle.medical);

  std::set<PatientId> opioid_patients;
  for (const auto& c : bundle.pharmacy)
    if (c.is_opioid) opioid_patients.insert(c.patient);

  const auto naive = identify_naive(bundle.pharmacy, windows, opts.index_mode);
  std::set<PatientId> naive_ids;
  for (const auto& [pid, _] : naive) naive_ids.insert(pid);
  for (const auto& pid : opioid_patients)
    if (!naive_ids.count(pid)) result.exclusions.bump("not opioid-naive");

  for (const auto& [pid, index_date] : naive) {
    auto eit = elig.find(pid);
    if (eit == elig.end()) {
      result.exclusions.bump("no eligibility record");
      continue;
    }
    const Gender g = eit->second->gender;
    if (g == Gender::Unknown || g == Gender::Missing) {
      result.exclusions.bump("unknown gender");
      continue;
    }
    if (opts.study_end && index_date + windows.follow_up_end_days > *opts.study_end) {
      result.exclusions.bump("insufficient follow-up");
      continue;
    }
    static const std::vector<MedicalClaim> kEmpty;
    auto mit = medical.find(pid);
    const auto& claims = mit == medical.end() ? kEmpty : mit->second;
    auto labeled = label_outcome(pid, index_date, claims, windows, codes, opts);
    switch (labeled.status) {
      case OutcomeStatus::ExcludedPreexisting:
        result.exclusions.bump("pre-index outcome code");
        break;
      case OutcomeStatus::ExcludedUsageWindow:
        result.exclusions.bump("outcome during usage window");
        break;
      case OutcomeStatus::Labeled:
        result.members.push_back(labeled.member);
        break;
    }
  }
  return result;
}

inline void write_cohort(const std::vector<CohortMember>& members, std::ostream& out) {
  out << "patient_id,index_date,label,censor_date\n";
  for (const auto& m : members) {
    out << m.patient << "," << format_date(m.index_date) << "," << label_name(m.label) << ",";
    if (m.censor_date) out << format_date(*m.censor_date);
    out << "\n";
  }
}

}  // namespace oudpipe
