#pragma once

#include <atomic>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "crisk/metrics/evaluate.hpp"
#include "crisk/models/train.hpp"
#include "crisk/pipeline/audit.hpp"
#include "crisk/pipeline/grid.hpp"

namespace crisk::pipeline {

/// Runs job(i) for i in [0, n) on up to `workers` threads. Jobs must write
/// only to their own slot. The first exception is rethrown after all
/// threads have joined.
template <class Job>
void run_jobs(std::size_t n, unsigned workers, Job&& job) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

struct FitResult {
  std::unique_ptr<models::CifModel> model;
  models::TrainHistory history;
};

/// Builds and fits a model with early stopping on `valid`.
inline FitResult train_with_early_stopping(const ModelConfig& cfg, const cohort::Cohort& train,
                                           const cohort::Cohort& valid, std::uint64_t seed) {
  if (valid.empty()) throw DataError("early stopping needs a non-empty validation cohort");
  FitResult r;
  r.model = models::make_model(cfg);
  r.history = models::train_model(*r.model, train, &valid, seed);
  return r;
}

/// Mean of per-risk C^td; also returns the per-risk values.
inline double selection_score(const models::CifModel& m, const cohort::Cohort& valid, double horizon,
                              std::vector<double>* per_risk = nullptr) {
  double sum = 0.0;
  for (int r = 1; r <= valid.risks(); ++r) {
    const double v = metrics::model_ctd(m, valid, r, horizon).ctd;
    if (per_risk) per_risk->push_back(v);
    sum += v;
  }
  return sum / static_cast<double>(valid.risks());
}

struct Trial {
  std::size_t iteration = 0;
  ModelConfig config;
  bool ok = false;
  double score = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_risk;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  std::string error;
  /// Earlier iteration with an identical config whose result was reused.
  std::optional<std::size_t> duplicate_of;
};

inline nlohmann::json to_json(const Trial& t) {
  nlohmann::json j = {{"iteration", t.iteration}, {"config", models::to_json(t.config)}, {"ok", t.ok}};
  if (t.ok) {
    j["score"] = t.score;
    j["per_risk"] = t.per_risk;
    j["best_epoch"] = t.best_epoch;
    j["epochs"] = t.epochs;
  } else {
    j["error"] = t.error;
  }
  if (t.duplicate_of) j["duplicate_of"] = *t.duplicate_of;
  return j;
}

struct SearchResult {
  std::vector<Trial> trials;
  std::size_t best = 0;
  std::size_t evaluations = 0;

  const Trial& best_trial() const { return trials.at(best); }
  std::string failure_log() const {
    std::ostringstream os;
    for (auto& t : trials)
      if (!t.ok) os << "iteration " << t.iteration << ": " << t.error << "\n";
    return os.str();
  }
};

struct SearchOptions {
  std::size_t n_iter = 100;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double horizon = std::numeric_limits<double>::quiet_NaN();
  LeakageAudit* audit = nullptr;
  std::size_t audit_fold = 0;
};

/// Samples n_iter configs from `seed`, fits each with early stopping on
/// `valid` and keeps the best mean per-risk C^td on `valid`. Ties go to the
/// earlier iteration. Repeated configs are fitted once.
inline SearchResult random_search(const HParamGrid& grid, const ModelConfig& base, const cohort::Cohort& train,
                                  const cohort::Cohort& valid, const SearchOptions& opt) {
  if (opt.n_iter == 0) throw ConfigError("random_search: n_iter must be positive");
  {
    auto a = train.ids(), b = valid.ids();
    std::set<std::string> seen(a.begin(), a.end());
    for (auto& id : b)
      if (seen.count(id)) throw DataError("random_search: subject '" + id + "' is in both train and valid");
  }
  auto configs = sample_configs(grid, base, opt.n_iter, derive_seed(opt.seed, {0}));
  SearchResult res;
  std::map<std::string, std::size_t> first_seen;
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    configs[i].batch_size = std::min(configs[i].batch_size, train.size());
    Trial t;
    t.iteration = i;
    t.config = configs[i];
    auto [it, fresh] = first_seen.emplace(models::to_json(configs[i]).dump(), i);
    if (fresh) {
      unique.push_back(i);
    } else {
      t.duplicate_of = it->second;
    }
    res.trials.push_back(std::move(t));
  }
  res.evaluations = unique.size();

  run_jobs(unique.size(), opt.workers, [&](std::size_t u) {
    Trial& t = res.trials[unique[u]];
    try {
      if (opt.audit) {
        opt.audit->record(opt.audit_fold, "search.fit", train);
        opt.audit->record(opt.audit_fold, "search.select", valid);
      }
      auto fit = train_with_early_stopping(t.config, train, valid, derive_seed(opt.seed, {1, t.iteration}));
      t.score = selection_score(*fit.model, valid, opt.horizon, &t.per_risk);
      if (!std::isfinite(t.score)) throw NumericError("non-finite validation C^td");
      t.best_epoch = fit.history.best_epoch;
      t.epochs = fit.history.epochs();
      t.ok = true;
    } catch (const Error& e) {
      t.error = e.what();
    }
  });
  for (auto& t : res.trials) {
    if (!t.duplicate_of) continue;
    const Trial& src = res.trials[*t.duplicate_of];
    t.ok = src.ok;
    t.score = src.score;
    t.per_risk = src.per_risk;
    t.best_epoch = src.best_epoch;
    t.epochs = src.epochs;
    t.error = src.error;
  }

  bool any = false;
  for (std::size_t i = 0; i < res.trials.size(); ++i) {
    const auto& t = res.trials[i];
    if (t.ok && (!any || t.score > res.trials[res.best].score)) {
      res.best = i;
      any = true;
    }
  }
  if (!any) throw NumericError("random_search: all " + std::to_string(opt.n_iter) + " configurations failed\n" +
                               res.failure_log());
  return res;
}

}  // namespace crisk::pipeline
