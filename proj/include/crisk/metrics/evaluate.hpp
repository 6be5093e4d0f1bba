#pragma once

#include <limits>

#include "crisk/cohort/synthetic.hpp"
#include "crisk/metrics/ctd.hpp"
#include "crisk/models/cif_model.hpp"

namespace crisk::metrics {

/// C^td of a fitted model on a cohort for risk r.
inline CtdResult model_ctd(const models::CifModel& m, const cohort::Cohort& c, int r,
                           double horizon = std::numeric_limits<double>::quiet_NaN(), unsigned workers = 1) {
  const grad::Tensor X = c.features();
  auto s = anchor_scores_batched(
      c, r, [&](const std::vector<double>& t) { return m.cif(X, t, r); }, horizon);
  return ctd_index(c, s, workers);
}

/// C^td per risk (1..R).
inline std::vector<CtdResult> model_ctd_all(const models::CifModel& m, const cohort::Cohort& c,
                                            double horizon = std::numeric_limits<double>::quiet_NaN(),
                                            unsigned workers = 1) {
  std::vector<CtdResult> out;
  for (int r = 1; r <= c.risks(); ++r) out.push_back(model_ctd(m, c, r, horizon, workers));
  return out;
}

/// C^td of the data-generating CIF on a synthetic cohort.
inline CtdResult oracle_ctd(const cohort::SynthSpec& spec, const cohort::Cohort& c, int r,
                            double horizon = std::numeric_limits<double>::quiet_NaN()) {
  return ctd_index(c, anchor_scores_batched(
                          c, r,
                          [&](const std::vector<double>& times) {
                            // Anchor times arrive in cohort order; integrate along sorted times.
                            std::vector<std::size_t> order(times.size());
                            std::iota(order.begin(), order.end(), 0);
                            std::sort(order.begin(), order.end(),
                                      [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
                            std::vector<double> sorted(times.size());
                            for (std::size_t k = 0; k < order.size(); ++k) sorted[k] = times[order[k]];
                            grad::Tensor out({c.size(), times.size()});
                            for (std::size_t j = 0; j < c.size(); ++j) {
                              auto path = cohort::oracle_cif_path(spec, c.subjects[j].x, sorted, r);
                              for (std::size_t k = 0; k < order.size(); ++k) out(j, order[k]) = path[k];
                            }
                            return out;
                          },
                          horizon));
}

}  // namespace crisk::metrics
