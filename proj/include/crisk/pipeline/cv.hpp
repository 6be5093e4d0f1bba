#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "crisk/cohort/split.hpp"
#include "crisk/features/pipeline.hpp"
#include "crisk/pipeline/search.hpp"

namespace crisk::pipeline {

// ---------------------------------------------------------------------------
// Confidence intervals
// ---------------------------------------------------------------------------

/// t_{0.975, df}, rounded to three decimals (df=4 gives 2.776).
inline double t_multiplier(std::size_t df) {
  if (df == 0) throw ConfigError("t multiplier needs at least one degree of freedom");
  boost::math::students_t dist(static_cast<double>(df));
  return std::round(boost::math::quantile(dist, 0.975) * 1000.0) / 1000.0;
}

struct RiskSummary {
  std::string risk;
  std::vector<double> values;
  double mean = 0.0;
  double sd = 0.0;  ///< sample sd (k-1)
  double lo = 0.0;
  double hi = 0.0;
};

/// mean +- t * sd / sqrt(k).
inline RiskSummary summarize(const std::string& risk, const std::vector<double>& values, double multiplier) {
  if (values.size() < 2) throw DataError("confidence interval needs at least two fold values");
  RiskSummary s;
  s.risk = risk;
  s.values = values;
  const double k = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / (k - 1.0));
  const double half = multiplier * s.sd / std::sqrt(k);
  s.lo = s.mean - half;
  s.hi = s.mean + half;
  return s;
}

// ---------------------------------------------------------------------------
// Per-fold preprocessing
// ---------------------------------------------------------------------------

struct FoldData {
  cohort::Cohort train;
  cohort::Cohort test;
};

/// Fits on `train` only and applies the fitted transform to both.
using FoldTransform = std::function<FoldData(const cohort::Cohort& train, const cohort::Cohort& test)>;

inline FoldTransform identity_transform() {
  return [](const cohort::Cohort& train, const cohort::Cohort& test) { return FoldData{train, test}; };
}

inline FoldTransform standardize_transform() {
  return [](const cohort::Cohort& train, const cohort::Cohort& test) {
    auto r = features::standardize_fit_apply(features::from_cohort(train), {features::from_cohort(test)});
    return FoldData{features::with_features(train, r.train), features::with_features(test, r.others[0])};
  };
}

/// Standardization followed by per-category PCA with `m` components.
/// `categories` gives one category per cohort feature column.
inline FoldTransform pca_transform(std::vector<std::string> categories, std::size_t m) {
  return [categories = std::move(categories), m](const cohort::Cohort& train, const cohort::Cohort& test) {
    auto a = features::from_cohort(train), b = features::from_cohort(test);
    a.set_categories(categories);
    b.set_categories(categories);
    auto st = features::standardize_fit_apply(a, {b});
    auto pca = features::pca_fit(st.train, m);
    return FoldData{features::with_features(train, features::pca_apply(pca, st.train)),
                    features::with_features(test, features::pca_apply(pca, st.others[0]))};
  };
}

// ---------------------------------------------------------------------------
// Nested cross-validation
// ---------------------------------------------------------------------------

struct FoldReport {
  std::size_t fold = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::vector<std::size_t> test_strata;  ///< censored first, then each risk
  std::size_t chosen_iteration = 0;
  ModelConfig config;
  std::size_t refit_epochs = 0;
  std::size_t evaluations = 0;
  std::size_t failed_trials = 0;
  std::vector<metrics::CtdResult> ctd;
  std::vector<Trial> trials;
};

struct CVReport {
  std::string label;
  ModelKind kind = ModelKind::Dsm;
  std::uint64_t seed = 0;
  std::size_t k = 5;
  double t_multiplier = 0.0;
  std::vector<std::string> risk_names;
  std::vector<FoldReport> folds;
  std::vector<RiskSummary> summary;
};

struct CvOptions {
  std::size_t k = 5;
  std::size_t n_iter = 100;
  double inner_fraction = 0.1;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double horizon = std::numeric_limits<double>::quiet_NaN();
  FoldTransform transform = standardize_transform();
  LeakageAudit* audit = nullptr;
  /// When set, each refitted fold model is saved as fold<f>.ckpt here.
  std::filesystem::path checkpoint_dir;
  std::string label;
  bool keep_trials = true;
};

namespace detail {

inline void require_fold_events(const cohort::Cohort& c, const std::string& what) {
  auto counts = c.stratum_counts();
  for (int r = 1; r <= c.risks(); ++r) {
    if (counts.at(static_cast<std::size_t>(r)) == 0) {
      throw DataError(what + " has no events of risk '" + c.stratum_name(r) + "'");
    }
  }
}

}  // namespace detail

/// Outer stratified k-fold. Per fold: fit preprocessing on the training
/// fold, hold out a stratified inner share for the search, refit the chosen
/// config on the whole training fold for the best epoch count found during
/// the search, and score C^td per risk on the test fold.
inline CVReport nested_cv(const cohort::Cohort& c, const ModelConfig& base, const HParamGrid& grid,
                          const CvOptions& opt) {
  grid.validate();
  if (c.risks() < 1) throw DataError("cohort declares no risks");
  const auto folds = cohort::stratified_kfold(c, opt.k, derive_seed(opt.seed, {0}));

  struct Plan {
    cohort::Cohort train, test;
    cohort::Holdout inner;
  };
  std::vector<Plan> plans(opt.k);
  for (std::size_t f = 0; f < opt.k; ++f) {
    auto& p = plans[f];
    p.train = c.subset(cohort::complement(folds, f));
    p.test = c.subset(folds[f]);
    detail::require_fold_events(p.train, "training fold " + std::to_string(f));
    detail::require_fold_events(p.test, "test fold " + std::to_string(f));
    p.inner = cohort::holdout_split(p.train, opt.inner_fraction, derive_seed(opt.seed, {1, f}));
    detail::require_fold_events(p.train.subset(p.inner.train), "inner training split of fold " + std::to_string(f));
    if (opt.audit) opt.audit->register_test(f, p.test.ids());
  }
  if (!opt.checkpoint_dir.empty()) std::filesystem::create_directories(opt.checkpoint_dir);

  CVReport rep;
  rep.label = opt.label.empty() ? models::kind_name(base.kind) : opt.label;
  rep.kind = base.kind;
  rep.seed = opt.seed;
  rep.k = opt.k;
  rep.t_multiplier = t_multiplier(opt.k - 1);
  rep.risk_names = c.risk_names;

  for (std::size_t f = 0; f < opt.k; ++f) {
    auto& p = plans[f];
    if (opt.audit) opt.audit->record(f, "preprocess", p.train);
    FoldData d = opt.transform(p.train, p.test);
    const cohort::Cohort inner_train = d.train.subset(p.inner.train);
    const cohort::Cohort inner_valid = d.train.subset(p.inner.valid);

    SearchOptions so;
    so.n_iter = opt.n_iter;
    so.seed = derive_seed(opt.seed, {2, f});
    so.workers = opt.workers;
    so.audit = opt.audit;
    so.audit_fold = f;
    auto search = random_search(grid, base, inner_train, inner_valid, so);
    const Trial& best = search.best_trial();

    FoldReport fr;
    fr.fold = f;
    fr.train_size = d.train.size();
    fr.test_size = d.test.size();
    fr.test_strata = d.test.stratum_counts();
    fr.chosen_iteration = best.iteration;
    fr.config = best.config;
    fr.config.batch_size = std::min(best.config.batch_size, d.train.size());
    fr.refit_epochs = std::max<std::size_t>(best.best_epoch, 1);
    fr.evaluations = search.evaluations;
    for (auto& t : search.trials) fr.failed_trials += t.ok ? 0 : 1;

    if (opt.audit) opt.audit->record(f, "refit", d.train);
    auto model = models::make_model(fr.config);
    models::train_model(*model, d.train, nullptr, derive_seed(opt.seed, {3, f}), fr.refit_epochs);
    for (int r = 1; r <= d.test.risks(); ++r) fr.ctd.push_back(metrics::model_ctd(*model, d.test, r, opt.horizon));
    if (!opt.checkpoint_dir.empty()) {
      models::save_model(*model, opt.checkpoint_dir / ("fold" + std::to_string(f) + ".ckpt"));
    }
    if (opt.keep_trials) fr.trials = std::move(search.trials);
    rep.folds.push_back(std::move(fr));
  }

  for (int r = 1; r <= c.risks(); ++r) {
    std::vector<double> v;
    for (auto& fr : rep.folds) v.push_back(fr.ctd[static_cast<std::size_t>(r - 1)].ctd);
    rep.summary.push_back(summarize(c.stratum_name(r), v, rep.t_multiplier));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RiskSummary& s) {
  return {{"risk", s.risk}, {"values", s.values}, {"mean", s.mean}, {"sd", s.sd}, {"lo", s.lo}, {"hi", s.hi}};
}

inline nlohmann::json to_json(const CVReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (auto& f : r.folds) {
    nlohmann::json ctd = nlohmann::json::array();
    for (auto& x : f.ctd) ctd.push_back(metrics::to_json(x, r.risk_names.at(static_cast<std::size_t>(x.risk - 1))));
    nlohmann::json trials = nlohmann::json::array();
    for (auto& t : f.trials) trials.push_back(to_json(t));
    folds.push_back({{"fold", f.fold},
                     {"train_size", f.train_size},
                     {"test_size", f.test_size},
                     {"test_strata", f.test_strata},
                     {"chosen_iteration", f.chosen_iteration},
                     {"config", models::to_json(f.config)},
                     {"refit_epochs", f.refit_epochs},
                     {"evaluations", f.evaluations},
                     {"failed_trials", f.failed_trials},
                     {"ctd", ctd},
                     {"trials", trials}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (auto& s : r.summary) summary.push_back(to_json(s));
  return {{"label", r.label},
          {"model", models::kind_name(r.kind)},
          {"seed", r.seed},
          {"k", r.k},
          {"t_multiplier", r.t_multiplier},
          {"risks", r.risk_names},
          {"folds", folds},
          {"summary", summary}};
}

/// Reads the parts of a report that tables need (label, model, risks and
/// summary); fold detail is kept as far as it is present.
inline CVReport cv_report_from_json(const nlohmann::json& j) {
  try {
    CVReport r;
    r.label = j.at("label").get<std::string>();
    r.kind = models::parse_kind(j.at("model").get<std::string>());
    r.seed = j.value("seed", std::uint64_t{0});
    r.k = j.value("k", std::size_t{0});
    r.t_multiplier = j.value("t_multiplier", 0.0);
    r.risk_names = j.at("risks").get<std::vector<std::string>>();
    for (auto& s : j.at("summary")) {
      RiskSummary x;
      x.risk = s.at("risk").get<std::string>();
      x.values = s.value("values", std::vector<double>{});
      x.mean = s.at("mean").get<double>();
      x.sd = s.value("sd", 0.0);
      x.lo = s.at("lo").get<double>();
      x.hi = s.at("hi").get<double>();
      r.summary.push_back(std::move(x));
    }
    if (j.contains("folds")) {
      for (auto& fj : j.at("folds")) {
        FoldReport f;
        f.fold = fj.at("fold").get<std::size_t>();
        f.train_size = fj.value("train_size", std::size_t{0});
        f.test_size = fj.value("test_size", std::size_t{0});
        f.test_strata = fj.value("test_strata", std::vector<std::size_t>{});
        f.chosen_iteration = fj.value("chosen_iteration", std::size_t{0});
        if (fj.contains("config")) f.config = models::model_config_from_json(fj.at("config"));
        f.refit_epochs = fj.value("refit_epochs", std::size_t{0});
        f.evaluations = fj.value("evaluations", std::size_t{0});
        f.failed_trials = fj.value("failed_trials", std::size_t{0});
        for (auto& cj : fj.value("ctd", nlohmann::json::array())) {
          metrics::CtdResult c;
          auto name = cj.at("risk").get<std::string>();
          auto it = std::find(r.risk_names.begin(), r.risk_names.end(), name);
          c.risk = static_cast<int>(it - r.risk_names.begin()) + 1;
          c.ctd = cj.at("ctd").get<double>();
          c.pairs = cj.at("pairs").get<std::size_t>();
          c.horizon = cj.at("horizon").get<double>();
          f.ctd.push_back(c);
        }
        r.folds.push_back(std::move(f));
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed CV report: ") + e.what());
  }
}

}  // namespace crisk::pipeline
