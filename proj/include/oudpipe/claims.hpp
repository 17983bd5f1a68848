#pragma once

#include <algorithm>
#include <cctype>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "oudpipe/csv.hpp"
#include "oudpipe/dates.hpp"

namespace oudpipe {

using PatientId = std::string;

enum class Gender { Male, Female, Unknown, Missing };

struct PharmacyClaim {
  PatientId patient;
  Date fill_date;
  std::string drug_code;  // NDC
  int days_supply;
  bool is_opioid = false;
};

struct MedicalClaim {
  PatientId patient;
  Date service_date;
  std::string diagnosis;  // normalized ICD-9, no decimal point
};

struct EligibilityRecord {
  PatientId patient;
  std::optional<int> age;
  Gender gender = Gender::Missing;
  std::string zip;  // pass-through only
};

struct RejectEntry {
  std::string file;
  std::size_t line;
  std::string reason;
};

struct ParseOptions {
  // When set, pharmacy fill dates outside [study_start, study_end] are rejected.
  std::optional<Date> study_start;
  std::optional<Date> study_end;
};

/// ICD-9 lexical check + normalization: strips the decimal point.
/// Accepted shapes: ddd[.d[d]], Eddd[.d], Vdd[.d[d]].
inline std::optional<std::string> normalize_icd9(const std::string& raw) {
  std::string s;
  int dots = 0;
  std::size_t dot_pos = 0;
  for (char c : raw) {
    if (c == '.') {
      ++dots;
      dot_pos = s.size();
      continue;
    }
    s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (dots > 1 || s.empty()) return std::nullopt;
  const std::size_t stem = s[0] == 'E' ? 4 : s[0] == 'V' ? 3 : 3;
  if (dots == 1 && dot_pos != stem) return std::nullopt;
  auto digits_from = [&](size_t i) {
    for (; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
  };
  if (s[0] == 'E') {
    if (s.size() < 4 || s.size() > 5 || !digits_from(1)) return std::nullopt;
  } else if (s[0] == 'V') {
    if (s.size() < 3 || s.size() > 5 || !digits_from(1)) return std::nullopt;
  } else {
    if (s.size() < 3 || s.size() > 5 || !digits_from(0)) return std::nullopt;
  }
  return s;
}

/// Re-inserts the decimal point for display ("96501" -> "965.01", "E8500" -> "E850.0").
inline std::string format_icd9(const std::string& norm) {
  const size_t stem = (norm[0] == 'E') ? 4 : (norm[0] == 'V') ? 3 : 3;
  if (norm.size() <= stem) return norm;
  return norm.substr(0, stem) + "." + norm.substr(stem);
}

/// Opioid NDC lookup table, shipped as a data file with one code per line.
class OpioidTable {
 public:
  OpioidTable() = default;
  explicit OpioidTable(std::vector<std::string> codes) {
    for (auto& c : codes) codes_.insert(std::move(c));
  }

  static OpioidTable load(const std::string& path) {
    auto in = open_input(path);
    OpioidTable t;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      t.codes_.insert(line);
    }
    return t;
  }

  bool contains(const std::string& ndc) const { return codes_.count(ndc) > 0; }
  std::size_t size() const { return codes_.size(); }
  const std::unordered_set<std::string>& codes() const { return codes_; }

 private:
  std::unordered_set<std::string> codes_;
};

inline bool classify_opioid(const std::string& drug_code, const OpioidTable& table) {
  return table.contains(drug_code);
}

struct ClaimsBundle {
  std::vector<PharmacyClaim> pharmacy;
  std::vector<MedicalClaim> medical;
  std::vector<EligibilityRecord> eligibility;
  std::vector<RejectEntry> rejects;
  std::size_t pharmacy_rows = 0, medical_rows = 0, eligibility_rows = 0;
};

namespace detail {

inline std::optional<long> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (...) {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

inline void parse_pharmacy(std::istream& in, const OpioidTable& table, ClaimsBundle& out,
                           const ParseOptions& opts = {}, const std::string& file = "pharmacy.csv") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;  // header
    ++out.pharmacy_rows;
    auto f = split_csv_line(line);
    auto reject = [&](const std::string& why) { out.rejects.push_back({file, lineno, why}); };
    if (f.size() != 4) {
      reject("expected 4 columns");
      continue;
    }
    if (f[0].empty()) {
      reject("empty patient_id");
      continue;
    }
    auto date = parse_date(f[1]);
    if (!date) {
      reject("bad fill_date");
      continue;
    }
    if ((opts.study_start && *date < *opts.study_start) || (opts.study_end && *date > *opts.study_end)) {
      reject("fill_date outside study window");
      continue;
    }
    auto supply = detail::parse_int(f[3]);
    if (!supply || *supply < 0) {
      reject("days_supply must be >= 0");
      continue;
    }
    if (*supply > 365) {
      reject("days_supply exceeds 365");
      continue;
    }
    if (f[2].empty()) {
      reject("empty ndc");
      continue;
    }
    out.pharmacy.push_back({f[0], *date, f[2], static_cast<int>(*supply), classify_opioid(f[2], table)});
  }
}

inline void parse_medical(std::istream& in, ClaimsBundle& out, const std::string& file = "medical.csv") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    ++out.medical_rows;
    auto f = split_csv_line(line);
    auto reject = [&](const std::string& why) { out.rejects.push_back({file, lineno, why}); };
    if (f.size() != 3) {
      reject("expected 3 columns");
      continue;
    }
    if (f[0].empty()) {
      reject("empty patient_id");
      continue;
    }
    auto date = parse_date(f[1]);
    if (!date) {
      reject("bad service_date");
      continue;
    }
    auto code = normalize_icd9(f[2]);
    if (!code) {
      reject("not an ICD-9 code");
      continue;
    }
    out.medical.push_back({f[0], *date, *code});
  }
}

inline void parse_eligibility(std::istream& in, ClaimsBundle& out, const std::string& file = "eligibility.csv") {
  std::string line;
  std::size_t lineno = 0;
  // Duplicates resolved by keeping the most recent (last) record per patient.
  std::unordered_map<PatientId, std::size_t> index;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    ++out.eligibility_rows;
    auto f = split_csv_line(line);
    auto reject = [&](const std::string& why) { out.rejects.push_back({file, lineno, why}); };
    if (f.size() != 4) {
      reject("expected 4 columns");
      continue;
    }
    if (f[0].empty()) {
      reject("empty patient_id");
      continue;
    }
    EligibilityRecord rec;
    rec.patient = f[0];
    if (!f[1].empty()) {
      auto age = detail::parse_int(f[1]);
      if (!age || *age < 0) {
        reject("age must be a non-negative integer");
        continue;
      }
      rec.age = static_cast<int>(*age);
    }
    if (f[2] == "M")
      rec.gender = Gender::Male;
    else if (f[2] == "F")
      rec.gender = Gender::Female;
    else if (f[2] == "U")
      rec.gender = Gender::Unknown;
    else if (f[2].empty())
      rec.gender = Gender::Missing;
    else {
      reject("gender must be M|F|U|blank");
      continue;
    }
    rec.zip = f[3];
    auto it = index.find(rec.patient);
    if (it != index.end()) {
      out.eligibility[it->second] = rec;
    } else {
      index.emplace(rec.patient, out.eligibility.size());
      out.eligibility.push_back(rec);
    }
  }
}

struct ClaimsPaths {
  std::string pharmacy, medical, eligibility;
};

inline ClaimsBundle parse_claims(const ClaimsPaths& paths, const OpioidTable& table,
                                 const ParseOptions& opts = {}) {
  ClaimsBundle bundle;
  {
    auto in = open_input(paths.pharmacy);  // missing file -> fatal throw
    parse_pharmacy(in, table, bundle, opts);
  }
  {
    auto in = open_input(paths.medical);
    parse_medical(in, bundle);
  }
  {
    auto in = open_input(paths.eligibility);
    parse_eligibility(in, bundle);
  }
  return bundle;
}

inline void write_rejects(const std::vector<RejectEntry>& rejects, const std::string& path) {
  auto out = open_output(path);
  out << "file,line,reason\n";
  for (const auto& r : rejects) out << r.file << "," << r.line << "," << r.reason << "\n";
}

// Writers for the three claim files (used by the synthetic generator and round-trip tests).

inline void write_pharmacy(const std::vector<PharmacyClaim>& rows, std::ostream& out) {
  out << "patient_id,fill_date,ndc,days_supply\n";
  for (const auto& r : rows)
    out << r.patient << "," << format_date(r.fill_date) << "," << r.drug_code << "," << r.days_supply << "\n";
}

inline void write_medical(const std::vector<MedicalClaim>& rows, std::ostream& out) {
  out << "patient_id,service_date,icd9\n";
  for (const auto& r : rows)
    out << r.patient << "," << format_date(r.service_date) << "," << format_icd9(r.diagnosis) << "\n";
}

inline void write_eligibility(const std::vector<EligibilityRecord>& rows, std::ostream& out) {
  out << "patient_id,age,gender,zip\n";
  for (const auto& r : rows) {
    out << r.patient << ",";
    if (r.age) out << *r.age;
    out << ",";
    switch (r.gender) {
      case Gender::Male: out << "M"; break;
      case Gender::Female: out << "F"; break;
      case Gender::Unknown: out << "U"; break;
      case Gender::Missing: break;
    }
    out << "," << r.zip << "\n";
  }
}

}  // namespace oudpipe
