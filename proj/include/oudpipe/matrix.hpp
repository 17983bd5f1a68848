#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "oudpipe/claims.hpp"
#include "oudpipe/cohort.hpp"
#include "oudpipe/csv.hpp"

namespace oudpipe {

enum class FeatureKind { Demographic, Chronicity, DxCount };

inline const char* feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Demographic: return "demographic";
    case FeatureKind::Chronicity: return "chronicity";
    case FeatureKind::DxCount: return "dx_count";
  }
  return "?";
}

/// Patient x feature table. Dense row-major in memory, sparse triplets on disk.
/// Labels are kept alongside; internally OUD is the positive class (1).
struct FeatureMatrix {
  std::vector<std::string> feature_names;
  std::vector<FeatureKind> kinds;
  std::vector<PatientId> row_ids;
  std::vector<Label> labels;
  std::vector<double> values;  // rows() * cols()

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return feature_names.size(); }

  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

  /// 1 for OUD, 0 for NOUD (internal positive class).
  std::vector<int> y() const {
    std::vector<int> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) out[i] = labels[i] == Label::OUD ? 1 : 0;
    return out;
  }

  FeatureMatrix select_columns(const std::vector<std::size_t>& cols_keep) const {
    FeatureMatrix m;
    m.row_ids = row_ids;
    m.labels = labels;
    for (auto c : cols_keep) {
      m.feature_names.push_back(feature_names[c]);
      m.kinds.push_back(kinds[c]);
    }
    m.values.resize(rows() * cols_keep.size());
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t j = 0; j < cols_keep.size(); ++j)
        m.values[r * cols_keep.size() + j] = at(r, cols_keep[j]);
    return m;
  }

  FeatureMatrix select_rows(const std::vector<std::size_t>& rows_keep) const {
    FeatureMatrix m;
    m.feature_names = feature_names;
    m.kinds = kinds;
    m.values.reserve(rows_keep.size() * cols());
    for (auto r : rows_keep) {
      m.row_ids.push_back(row_ids[r]);
      m.labels.push_back(labels[r]);
      m.values.insert(m.values.end(), values.begin() + r * cols(), values.begin() + (r + 1) * cols());
    }
    return m;
  }

  std::size_t column_index(const std::string& name) const {
    for (std::size_t c = 0; c < feature_names.size(); ++c)
      if (feature_names[c] == name) return c;
    throw std::out_of_range("no such feature: " + name);
  }
};

/// Sparse triplet dump: patient_id,feature_name,value (nonzero entries only).
inline void write_features_csv(const FeatureMatrix& m, std::ostream& out) {
  out << "patient_id,feature_name,value\n";
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (m.at(r, c) != 0.0)
        out << m.row_ids[r] << "," << m.feature_names[c] << "," << fmt_double(m.at(r, c)) << "\n";
}

/// Serialized label encoding follows the study convention: OUD -> 0, NOUD -> 1.
inline void write_labels_csv(const FeatureMatrix& m, std::ostream& out) {
  out << "patient_id,label\n";
  for (std::size_t r = 0; r < m.rows(); ++r)
    out << m.row_ids[r] << "," << (m.labels[r] == Label::OUD ? 0 : 1) << "\n";
}

}  // namespace oudpipe
