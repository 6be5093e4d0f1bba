#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisk/cohort/cohort.hpp"
#include "crisk/error.hpp"
#include "crisk/io/csv.hpp"

namespace crisk::features {

/// n x d row-major feature table with named (and optionally categorised)
/// columns. Zero-width tables are allowed so that fusion has an identity.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::vector<std::string> names)
      : rows_(rows), names_(std::move(names)), data_(rows_ * names_.size(), 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return names_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::string>& names() { return names_; }

  /// Category per column; empty when uncategorised.
  const std::vector<std::string>& categories() const { return categories_; }
  void set_categories(std::vector<std::string> cats) {
    if (!cats.empty() && cats.size() != cols()) {
      throw DataError("category list length " + std::to_string(cats.size()) +
                      " does not match column count " + std::to_string(cols()));
    }
    categories_ = std::move(cats);
  }

  /// Optional subject ids, one per row.
  const std::vector<std::string>& ids() const { return ids_; }
  void set_ids(std::vector<std::string> ids) {
    if (!ids.empty() && ids.size() != rows_) throw DataError("id list length does not match rows");
    ids_ = std::move(ids);
  }

  std::size_t column_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw DataError("unknown feature column '" + name + "'");
    return static_cast<std::size_t>(it - names_.begin());
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  FeatureMatrix select_rows(const std::vector<std::size_t>& idx) const {
    FeatureMatrix out(idx.size(), names_);
    out.categories_ = categories_;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < cols(); ++j) out(r, j) = (*this)(idx[r], j);
    if (!ids_.empty()) {
      for (auto i : idx) out.ids_.push_back(ids_.at(i));
    }
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::vector<std::string> names_;
  std::vector<double> data_;
  std::vector<std::string> categories_;
  std::vector<std::string> ids_;
};

inline FeatureMatrix from_cohort(const cohort::Cohort& c) {
  FeatureMatrix m(c.size(), c.feature_names);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < c.size(); ++i) {
    ids.push_back(c.subjects[i].id);
    for (std::size_t j = 0; j < c.dim(); ++j) m(i, j) = c.subjects[i].x[j];
  }
  m.set_ids(std::move(ids));
  return m;
}

/// Replaces the cohort's features with `m` (same row order).
inline cohort::Cohort with_features(const cohort::Cohort& c, const FeatureMatrix& m) {
  if (m.rows() != c.size()) {
    throw DataError("feature rows " + std::to_string(m.rows()) + " do not match cohort size " +
                    std::to_string(c.size()));
  }
  cohort::Cohort out = c;
  out.feature_names = m.names();
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto& x = out.subjects[i].x;
    x.assign(m.cols(), 0.0);
    for (std::size_t j = 0; j < m.cols(); ++j) x[j] = m(i, j);
  }
  out.validate();
  return out;
}

/// Reads `id,<feature...>`.
inline FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  auto t = io::read_csv(path);
  if (t.header.empty() || t.header[0] != "id") {
    throw DataError(path.string() + ": first column must be id");
  }
  FeatureMatrix m(t.rows.size(), std::vector<std::string>(t.header.begin() + 1, t.header.end()));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = path.string() + ":" + std::to_string(row.line);
    ids.push_back(row.fields[0]);
    for (std::size_t j = 1; j < row.fields.size(); ++j)
      m(i, j - 1) = io::parse_double(row.fields[j], where);
  }
  m.set_ids(std::move(ids));
  return m;
}

inline void write_feature_csv(std::ostream& os, const FeatureMatrix& m) {
  os << "id";
  for (auto& n : m.names()) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << (m.ids().empty() ? std::to_string(i) : m.ids()[i]);
    for (std::size_t j = 0; j < m.cols(); ++j) os << ',' << io::format_double(m(i, j));
    os << '\n';
  }
}

/// Category map: JSON object column-name -> category-name. Every column of
/// `m` must be mapped.
inline void apply_category_map(FeatureMatrix& m, const nlohmann::json& map) {
  if (!map.is_object()) throw ConfigError("category map must be a JSON object");
  std::vector<std::string> cats;
  for (auto& n : m.names()) {
    auto it = map.find(n);
    if (it == map.end() || !it->is_string()) {
      throw ConfigError("category map has no string entry for column '" + n + "'");
    }
    cats.push_back(it->get<std::string>());
  }
  m.set_categories(std::move(cats));
}

/// Reorders rows of `m` to follow `ids`; every id must be present.
inline FeatureMatrix align_rows(const FeatureMatrix& m, const std::vector<std::string>& ids) {
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < m.ids().size(); ++i) where[m.ids()[i]] = i;
  std::vector<std::size_t> idx;
  for (auto& id : ids) {
    auto it = where.find(id);
    if (it == where.end()) throw DataError("no feature row for subject " + id);
    idx.push_back(it->second);
  }
  return m.select_rows(idx);
}

}  // namespace crisk::features
