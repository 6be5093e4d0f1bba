#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "crisk/features/matrix.hpp"

namespace crisk::features {

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

struct Standardizer {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> sd;  // population sd; 0 marks a constant column

  FeatureMatrix apply(const FeatureMatrix& m) const {
    if (m.names() != names) throw DataError("standardizer: column names differ from fitted columns");
    FeatureMatrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j)
        out(i, j) = sd[j] > 0.0 ? (m(i, j) - mean[j]) / sd[j] : 0.0;
    return out;
  }
};

inline Standardizer standardize_fit(const FeatureMatrix& train) {
  if (train.rows() == 0) throw DataError("standardize: empty training matrix");
  Standardizer s;
  s.names = train.names();
  s.mean.assign(train.cols(), 0.0);
  s.sd.assign(train.cols(), 0.0);
  const double n = static_cast<double>(train.rows());
  for (std::size_t j = 0; j < train.cols(); ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < train.rows(); ++i) mu += train(i, j);
    mu /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < train.rows(); ++i) var += (train(i, j) - mu) * (train(i, j) - mu);
    var /= n;
    s.mean[j] = mu;
    // Relative guard so a column of identical large values counts as constant.
    s.sd[j] = var > 1e-24 * std::max(1.0, mu * mu) ? std::sqrt(var) : 0.0;
  }
  return s;
}

struct StandardizeResult {
  Standardizer params;
  FeatureMatrix train;
  std::vector<FeatureMatrix> others;
};

/// Fits on `train` only and transforms every matrix with those statistics.
inline StandardizeResult standardize_fit_apply(const FeatureMatrix& train,
                                               const std::vector<FeatureMatrix>& others = {}) {
  StandardizeResult r;
  r.params = standardize_fit(train);
  r.train = r.params.apply(train);
  for (auto& o : others) r.others.push_back(r.params.apply(o));
  return r;
}

// ---------------------------------------------------------------------------
// Symmetric eigensolver
// ---------------------------------------------------------------------------

struct EigenResult {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[k] is the k-th eigenvector
  int sweeps = 0;
};

/// Cyclic Jacobi rotations on a dense symmetric matrix (row-major, n x n).
/// Iterates until the off-diagonal Frobenius norm drops below
/// `tol * max(1, ||A||_F)`.
inline EigenResult jacobi_eigen(std::vector<double> a, std::size_t n, double tol = 1e-10,
                                int max_sweeps = 100) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  double frob = 0.0;
  for (double x : a) frob += x * x;
  const double target = tol * std::max(1.0, std::sqrt(frob));

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += at(i, j) * at(i, j);
    return std::sqrt(s);
  };

  EigenResult res;
  while (off_norm() >= target) {
    if (res.sweeps++ >= max_sweeps) throw NumericError("jacobi_eigen: no convergence");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return at(i, i) > at(j, j); });
  for (auto k : order) {
    res.values.push_back(at(k, k));
    std::vector<double> vec(n);
    for (std::size_t i = 0; i < n; ++i) vec[i] = v[i * n + k];
    res.vectors.push_back(std::move(vec));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Per-category PCA
// ---------------------------------------------------------------------------

struct CategoryPca {
  std::string category;
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // m vectors of length d_cat
  std::vector<double> eigenvalues;               // all d_cat, descending

  std::size_t kept() const { return components.size(); }
};

struct PcaModel {
  std::vector<CategoryPca> categories;  // sorted by category name
  std::size_t components_per_category = 0;

  std::size_t output_width() const { return categories.size() * components_per_category; }
};

inline nlohmann::json to_json(const PcaModel& m) {
  nlohmann::json cats = nlohmann::json::array();
  for (auto& c : m.categories) {
    cats.push_back({{"category", c.category},
                    {"columns", c.columns},
                    {"mean", c.mean},
                    {"components", c.components},
                    {"eigenvalues", c.eigenvalues}});
  }
  return {{"components_per_category", m.components_per_category}, {"categories", cats}};
}

/// Fits one PCA per column category on the training matrix. Uses the sample
/// covariance (n-1); each component's largest-magnitude entry is made
/// positive.
inline PcaModel pca_fit(const FeatureMatrix& train, std::size_t m = 10) {
  if (train.categories().empty()) throw DataError("pca_fit: matrix has no column categories");
  if (m == 0) throw ConfigError("pca_fit: component count must be positive");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t j = 0; j < train.cols(); ++j) groups[train.categories()[j]].push_back(j);

  PcaModel model;
  model.components_per_category = m;
  const std::size_t n = train.rows();
  for (auto& [cat, cols] : groups) {
    const std::size_t d = cols.size();
    if (d < m || n < m) {
      throw DataError("category '" + cat + "' has " + std::to_string(d) + " columns and " +
                      std::to_string(n) + " rows; at least " + std::to_string(m) + " of each needed");
    }
    if (n < 2) throw DataError("pca_fit: need at least two rows");
    CategoryPca cp;
    cp.category = cat;
    for (auto j : cols) cp.columns.push_back(train.names()[j]);
    cp.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < d; ++a) cp.mean[a] += train(i, cols[a]);
    for (auto& v : cp.mean) v /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a < d; ++a) row[a] = train(i, cols[a]) - cp.mean[a];
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) cov[a * d + b] += row[a] * row[b];
    }
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) {
        cov[a * d + b] /= static_cast<double>(n - 1);
        cov[b * d + a] = cov[a * d + b];
      }
    auto eig = jacobi_eigen(std::move(cov), d);
    cp.eigenvalues = eig.values;
    for (std::size_t k = 0; k < m; ++k) {
      auto vec = eig.vectors[k];
      std::size_t big = 0;
      for (std::size_t a = 1; a < d; ++a)
        if (std::abs(vec[a]) > std::abs(vec[big])) big = a;
      if (vec[big] < 0)
        for (auto& x : vec) x = -x;
      cp.components.push_back(std::move(vec));
    }
    model.categories.push_back(std::move(cp));
  }
  return model;
}

/// Projects onto the fitted components. Output columns are
/// `<category>_pc<j>` (j from 1) in category-name order.
inline FeatureMatrix pca_apply(const PcaModel& model, const FeatureMatrix& data) {
  if (!data.categories().empty()) {
    for (auto& c : data.categories()) {
      bool known = std::any_of(model.categories.begin(), model.categories.end(),
                               [&](auto& cp) { return cp.category == c; });
      if (!known) throw DataError("pca_apply: unknown category '" + c + "'");
    }
  }
  std::vector<std::string> names;
  for (auto& cp : model.categories)
    for (std::size_t k = 0; k < cp.kept(); ++k) names.push_back(cp.category + "_pc" + std::to_string(k + 1));
  FeatureMatrix out(data.rows(), names);
  out.set_ids(data.ids());
  std::size_t col = 0;
  for (auto& cp : model.categories) {
    std::vector<std::size_t> idx;
    for (auto& c : cp.columns) idx.push_back(data.column_index(c));
    for (std::size_t k = 0; k < cp.kept(); ++k, ++col) {
      const auto& w = cp.components[k];
      for (std::size_t i = 0; i < data.rows(); ++i) {
        double s = 0.0;
        for (std::size_t a = 0; a < idx.size(); ++a) s += (data(i, idx[a]) - cp.mean[a]) * w[a];
        out(i, col) = s;
      }
    }
  }
  return out;
}

/// Maps reduced scores back to the original columns of each category.
inline FeatureMatrix pca_reconstruct(const PcaModel& model, const FeatureMatrix& reduced) {
  std::vector<std::string> names;
  std::vector<std::string> cats;
  for (auto& cp : model.categories)
    for (auto& c : cp.columns) {
      names.push_back(c);
      cats.push_back(cp.category);
    }
  FeatureMatrix out(reduced.rows(), names);
  out.set_categories(cats);
  std::size_t col = 0, zcol = 0;
  for (auto& cp : model.categories) {
    for (std::size_t i = 0; i < reduced.rows(); ++i)
      for (std::size_t a = 0; a < cp.columns.size(); ++a) {
        double s = cp.mean[a];
        for (std::size_t k = 0; k < cp.kept(); ++k) s += reduced(i, zcol + k) * cp.components[k][a];
        out(i, col + a) = s;
      }
    col += cp.columns.size();
    zcol += cp.kept();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

/// Horizontal concatenation; columns of `a` come first. Column names gain a
/// `<prefix>:` when a prefix is given. Ids, when both sides carry them, must
/// agree row by row.
inline FeatureMatrix fuse_concat(const FeatureMatrix& a, const FeatureMatrix& b,
                                 const std::string& prefix_a = "", const std::string& prefix_b = "") {
  if (b.cols() == 0 && prefix_a.empty()) return a;
  if (a.cols() == 0 && prefix_b.empty()) return b;
  if (a.rows() != b.rows()) {
    throw DataError("fuse_concat: row mismatch (" + std::to_string(a.rows()) + " vs " +
                    std::to_string(b.rows()) + ")");
  }
  if (!a.ids().empty() && !b.ids().empty() && a.ids() != b.ids()) {
    throw DataError("fuse_concat: subject ids differ between modalities");
  }
  std::vector<std::string> names;
  for (auto& n : a.names()) names.push_back(prefix_a.empty() ? n : prefix_a + ":" + n);
  for (auto& n : b.names()) names.push_back(prefix_b.empty() ? n : prefix_b + ":" + n);
  FeatureMatrix out(a.rows(), names);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  out.set_ids(a.ids().empty() ? b.ids() : a.ids());
  return out;
}

}  // namespace crisk::features
