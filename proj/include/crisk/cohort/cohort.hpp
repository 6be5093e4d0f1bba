#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crisk/error.hpp"
#include "crisk/grad/tensor.hpp"
#include "crisk/io/csv.hpp"

namespace crisk::cohort {

/// One (x, t, e) observation. `event == 0` means right-censored at `time`.
struct Subject {
  std::string id;
  std::vector<double> x;
  double time = 0.0;
  int event = 0;
};

/// Per-stratum summary (stratum 0 is the censored group).
struct StratumStats {
  std::size_t count = 0;
  double mean_time = 0.0;
  double sd_time = 0.0;
};

class Cohort {
 public:
  std::vector<Subject> subjects;
  std::vector<std::string> risk_names;
  std::vector<std::string> feature_names;

  Cohort() = default;
  Cohort(std::vector<Subject> s, std::vector<std::string> risks, std::vector<std::string> features)
      : subjects(std::move(s)), risk_names(std::move(risks)), feature_names(std::move(features)) {
    validate();
  }

  std::size_t size() const { return subjects.size(); }
  bool empty() const { return subjects.empty(); }
  int risks() const { return static_cast<int>(risk_names.size()); }
  std::size_t dim() const { return feature_names.size(); }

  /// Throws DataError on the first violated invariant.
  void validate() const {
    for (const auto& s : subjects) {
      if (s.x.size() != feature_names.size()) {
        throw DataError("subject " + s.id + " has " + std::to_string(s.x.size()) +
                        " features, cohort declares " + std::to_string(feature_names.size()));
      }
      if (!(s.time >= 0.0) || !std::isfinite(s.time)) {
        throw DataError("subject " + s.id + " has invalid time " + std::to_string(s.time));
      }
      if (s.event < 0 || s.event > risks()) {
        throw DataError("subject " + s.id + " has event " + std::to_string(s.event) +
                        " outside [0," + std::to_string(risks()) + "]");
      }
      for (double v : s.x)
        if (!std::isfinite(v)) throw DataError("subject " + s.id + " has a non-finite feature");
    }
  }

  std::string stratum_name(int e) const {
    return e == 0 ? std::string("censored") : risk_names.at(static_cast<std::size_t>(e - 1));
  }

  Cohort subset(const std::vector<std::size_t>& idx) const {
    Cohort c;
    c.risk_names = risk_names;
    c.feature_names = feature_names;
    c.subjects.reserve(idx.size());
    for (auto i : idx) c.subjects.push_back(subjects.at(i));
    return c;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(subjects.size());
    for (auto& s : subjects) out.push_back(s.id);
    return out;
  }

  /// Counts per stratum, index 0 = censored, r = risk r.
  std::vector<std::size_t> stratum_counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(risks()) + 1, 0);
    for (auto& s : subjects) ++c[static_cast<std::size_t>(s.event)];
    return c;
  }

  std::vector<StratumStats> stratum_stats() const {
    std::vector<StratumStats> st(static_cast<std::size_t>(risks()) + 1);
    for (auto& s : subjects) {
      auto& x = st[static_cast<std::size_t>(s.event)];
      ++x.count;
      x.mean_time += s.time;
    }
    for (auto& x : st)
      if (x.count) x.mean_time /= static_cast<double>(x.count);
    for (auto& s : subjects) {
      auto& x = st[static_cast<std::size_t>(s.event)];
      x.sd_time += (s.time - x.mean_time) * (s.time - x.mean_time);
    }
    for (auto& x : st)
      if (x.count > 1) x.sd_time = std::sqrt(x.sd_time / static_cast<double>(x.count - 1));
    return st;
  }

  double max_time() const {
    double m = 0.0;
    for (auto& s : subjects) m = std::max(m, s.time);
    return m;
  }

  /// Feature matrix n x d. Requires d >= 1.
  grad::Tensor features() const {
    if (dim() == 0) throw DataError("cohort has no feature columns");
    grad::Tensor t({size(), dim()});
    for (std::size_t i = 0; i < size(); ++i)
      std::copy(subjects[i].x.begin(), subjects[i].x.end(), t.row_span(i).begin());
    return t;
  }

  std::vector<double> times() const {
    std::vector<double> t;
    t.reserve(size());
    for (auto& s : subjects) t.push_back(s.time);
    return t;
  }

  std::vector<int> events() const {
    std::vector<int> e;
    e.reserve(size());
    for (auto& s : subjects) e.push_back(s.event);
    return e;
  }
};

inline std::vector<std::string> default_risk_names(int r) {
  std::vector<std::string> out;
  for (int i = 1; i <= r; ++i) out.push_back("risk" + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header `id,time,event,<feature_1..d>`
// ---------------------------------------------------------------------------

inline void write_cohort_csv(std::ostream& os, const Cohort& c) {
  os << "id,time,event";
  for (auto& f : c.feature_names) os << ',' << f;
  os << '\n';
  for (auto& s : c.subjects) {
    os << s.id << ',' << io::format_double(s.time) << ',' << s.event;
    for (double v : s.x) os << ',' << io::format_double(v);
    os << '\n';
  }
}

inline void write_cohort_csv(const std::filesystem::path& path, const Cohort& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_cohort_csv(os, c);
}

/// Reads a cohort CSV. When `risk_names` is empty the risk count is the
/// largest event label present.
inline Cohort read_cohort_csv(const std::filesystem::path& path,
                              std::vector<std::string> risk_names = {}) {
  auto t = io::read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "id" || t.header[1] != "time" ||
      t.header[2] != "event") {
    throw DataError(path.string() + ": header must start with id,time,event");
  }
  Cohort c;
  c.feature_names.assign(t.header.begin() + 3, t.header.end());
  int max_event = 0;
  std::set<std::string> seen;
  for (auto& row : t.rows) {
    const std::string where = path.string() + ":" + std::to_string(row.line);
    Subject s;
    s.id = row.fields[0];
    if (!seen.insert(s.id).second) throw DataError(where + ": duplicate id " + s.id);
    s.time = io::parse_double(row.fields[1], where);
    s.event = static_cast<int>(io::parse_int(row.fields[2], where));
    for (std::size_t j = 3; j < row.fields.size(); ++j)
      s.x.push_back(io::parse_double(row.fields[j], where));
    max_event = std::max(max_event, s.event);
    c.subjects.push_back(std::move(s));
  }
  c.risk_names = risk_names.empty() ? default_risk_names(max_event) : std::move(risk_names);
  c.validate();
  return c;
}

}  // namespace crisk::cohort
