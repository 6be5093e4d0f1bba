#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crisk/cohort/cohort.hpp"
#include "crisk/error.hpp"
#include "crisk/grad/tensor.hpp"

namespace crisk::metrics {

inline constexpr double kTieTolerance = 1e-12;

/// F_r(t_i | x_j) for every anchor i (an event of risk r with t_i <= horizon)
/// and every subject j of the cohort.
struct AnchorScores {
  int risk = 1;
  double horizon = 0.0;
  std::vector<std::size_t> anchors;  ///< subject indices, in cohort order
  grad::Tensor values;               ///< n x anchors.size()

  double at(std::size_t a, std::size_t j) const { return values(j, a); }
};

inline double resolve_horizon(const cohort::Cohort& c, double horizon) {
  return std::isnan(horizon) ? c.max_time() : horizon;
}

inline std::vector<std::size_t> anchor_subjects(const cohort::Cohort& c, int r, double horizon) {
  if (r < 1 || r > c.risks()) throw ConfigError("risk " + std::to_string(r) + " out of range");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.subjects[i].event == r && c.subjects[i].time <= horizon) out.push_back(i);
  return out;
}

/// Builds the score table from a callback score(i, j) = F_r(t_i | x_j).
inline AnchorScores anchor_scores(const cohort::Cohort& c, int r,
                                  const std::function<double(std::size_t, std::size_t)>& score,
                                  double horizon = std::numeric_limits<double>::quiet_NaN()) {
  AnchorScores s;
  s.risk = r;
  s.horizon = resolve_horizon(c, horizon);
  s.anchors = anchor_subjects(c, r, s.horizon);
  s.values = grad::Tensor({c.size(), std::max<std::size_t>(s.anchors.size(), 1)});
  for (std::size_t a = 0; a < s.anchors.size(); ++a)
    for (std::size_t j = 0; j < c.size(); ++j) s.values(j, a) = score(s.anchors[a], j);
  return s;
}

/// Builds the score table from a batch predictor: predict(times) returns the
/// n x m matrix F_r(times[m] | x_j) for all subjects j (e.g. CifModel::cif).
inline AnchorScores anchor_scores_batched(
    const cohort::Cohort& c, int r,
    const std::function<grad::Tensor(const std::vector<double>&)>& predict,
    double horizon = std::numeric_limits<double>::quiet_NaN()) {
  AnchorScores s;
  s.risk = r;
  s.horizon = resolve_horizon(c, horizon);
  s.anchors = anchor_subjects(c, r, s.horizon);
  std::vector<double> times;
  for (auto i : s.anchors) times.push_back(c.subjects[i].time);
  if (times.empty()) {
    s.values = grad::Tensor({c.size(), 1});
    return s;
  }
  s.values = predict(times);
  if (s.values.rank() != 2 || s.values.rows() != c.size() || s.values.cols() != times.size()) {
    throw ShapeError("predictor returned " + grad::shape_str(s.values.shape()) + ", expected [" +
                     std::to_string(c.size()) + "," + std::to_string(times.size()) + "]");
  }
  return s;
}

struct CtdResult {
  int risk = 1;
  double ctd = 0.0;
  std::size_t pairs = 0;
  double horizon = 0.0;
  /// 2 * concordant + ties; ctd = half_units / (2 * pairs).
  std::uint64_t half_units = 0;
};

inline nlohmann::json to_json(const CtdResult& r, const std::string& risk_name) {
  return {{"risk", risk_name}, {"ctd", r.ctd}, {"pairs", r.pairs}, {"horizon", r.horizon}};
}

namespace detail {

inline int pair_units(double own, double other) {
  const double d = own - other;
  if (std::abs(d) <= kTieTolerance) return 1;
  return d > 0.0 ? 2 : 0;
}

inline CtdResult finish(const cohort::Cohort& c, const AnchorScores& s, std::uint64_t units,
                        std::size_t pairs) {
  if (pairs == 0) {
    throw DataError("no comparable pairs for risk '" + c.stratum_name(s.risk) + "'");
  }
  CtdResult r;
  r.risk = s.risk;
  r.pairs = pairs;
  r.horizon = s.horizon;
  r.half_units = units;
  r.ctd = static_cast<double>(units) / (2.0 * static_cast<double>(pairs));
  return r;
}

}  // namespace detail

/// Time-dependent concordance. Subjects are visited in time order so each
/// anchor only scans its strictly-later suffix. Integer tallies make the
/// result independent of how anchors are split across workers.
inline CtdResult ctd_index(const cohort::Cohort& c, const AnchorScores& s, unsigned workers = 1) {
  const std::size_t n = c.size();
  if (s.values.rows() != n) throw ShapeError("score table does not match cohort size");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return c.subjects[a].time < c.subjects[b].time; });
  std::vector<double> sorted_t(n);
  for (std::size_t k = 0; k < n; ++k) sorted_t[k] = c.subjects[order[k]].time;

  const std::size_t m = s.anchors.size();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(m, 1))));
  std::vector<std::uint64_t> units(workers, 0);
  std::vector<std::size_t> pairs(workers, 0);
  auto run = [&](unsigned w) {
    for (std::size_t a = w; a < m; a += workers) {
      const std::size_t i = s.anchors[a];
      const double ti = c.subjects[i].time;
      const double own = s.at(a, i);
      auto first = std::upper_bound(sorted_t.begin(), sorted_t.end(), ti) - sorted_t.begin();
      for (auto k = static_cast<std::size_t>(first); k < n; ++k) {
        units[w] += static_cast<std::uint64_t>(detail::pair_units(own, s.at(a, order[k])));
        ++pairs[w];
      }
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  return detail::finish(c, s, std::accumulate(units.begin(), units.end(), std::uint64_t{0}),
                        std::accumulate(pairs.begin(), pairs.end(), std::size_t{0}));
}

/// Reference implementation: literal loop over all ordered pairs.
inline CtdResult ctd_bruteforce(const cohort::Cohort& c, const AnchorScores& s) {
  const std::size_t n = c.size();
  if (n > 10000) throw ConfigError("ctd_bruteforce is limited to 10,000 subjects");
  std::vector<std::ptrdiff_t> column(n, -1);
  for (std::size_t a = 0; a < s.anchors.size(); ++a) column[s.anchors[a]] = static_cast<std::ptrdiff_t>(a);
  std::uint64_t units = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& si = c.subjects[i];
      const auto& sj = c.subjects[j];
      if (si.event != s.risk || !(si.time < sj.time) || !(si.time <= s.horizon)) continue;
      const auto a = static_cast<std::size_t>(column[i]);
      units += static_cast<std::uint64_t>(detail::pair_units(s.at(a, i), s.at(a, j)));
      ++pairs;
    }
  }
  return detail::finish(c, s, units, pairs);
}

}  // namespace crisk::metrics
