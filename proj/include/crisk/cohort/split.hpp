#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "crisk/cohort/cohort.hpp"

namespace crisk::cohort {

using IndexSet = std::vector<std::size_t>;

namespace detail {

inline std::vector<IndexSet> strata(const Cohort& c) {
  std::vector<IndexSet> s(static_cast<std::size_t>(c.risks()) + 1);
  for (std::size_t i = 0; i < c.size(); ++i)
    s[static_cast<std::size_t>(c.subjects[i].event)].push_back(i);
  return s;
}

}  // namespace detail

/// Partitions the cohort into k folds, stratified by event label (censored
/// and every risk). Each stratum is shuffled and dealt round-robin, so its
/// per-fold counts differ by at most one. The dealing offset carries over
/// between strata to keep fold totals balanced too.
inline std::vector<IndexSet> stratified_kfold(const Cohort& c, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be at least 2");
  auto st = detail::strata(c);
  for (std::size_t e = 0; e < st.size(); ++e) {
    if (st[e].size() < k) {
      throw DataError("stratum '" + c.stratum_name(static_cast<int>(e)) + "' has " +
                      std::to_string(st[e].size()) + " members, fewer than k=" + std::to_string(k));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<IndexSet> folds(k);
  std::size_t offset = 0;
  for (auto& members : st) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) folds[(offset + i) % k].push_back(members[i]);
    offset = (offset + members.size()) % k;
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// Complement of one fold.
inline IndexSet complement(const std::vector<IndexSet>& folds, std::size_t held_out) {
  IndexSet out;
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (f != held_out) out.insert(out.end(), folds[f].begin(), folds[f].end());
  std::sort(out.begin(), out.end());
  return out;
}

struct Holdout {
  IndexSet train;
  IndexSet valid;
};

/// Stratified holdout. The validation size is round(fraction * n); it is
/// shared out across strata by largest remainder so every stratum lands
/// within one subject of its proportional share.
inline Holdout holdout_split(const Cohort& c, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0,1)");
  auto st = detail::strata(c);
  const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(c.size())));
  std::vector<std::size_t> take(st.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t e = 0; e < st.size(); ++e) {
    const double exact = fraction * static_cast<double>(st[e].size());
    take[e] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[e];
    remainders.emplace_back(exact - std::floor(exact), e);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const auto e = remainders[i].second;
    if (take[e] < st[e].size()) {
      ++take[e];
      ++assigned;
    }
  }
  std::mt19937_64 rng(seed);
  Holdout h;
  for (std::size_t e = 0; e < st.size(); ++e) {
    auto members = st[e];
    std::shuffle(members.begin(), members.end(), rng);
    h.valid.insert(h.valid.end(), members.begin(), members.begin() + static_cast<long>(take[e]));
    h.train.insert(h.train.end(), members.begin() + static_cast<long>(take[e]), members.end());
  }
  std::sort(h.train.begin(), h.train.end());
  std::sort(h.valid.begin(), h.valid.end());
  return h;
}

}  // namespace crisk::cohort
