#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisk/cli/run_config.hpp"
#include "crisk/cohort/labels.hpp"
#include "crisk/features.hpp"
#include "crisk/mae.hpp"
#include "crisk/pipeline.hpp"

namespace crisk::cli {

namespace fs = std::filesystem;

// Child seeds of the master `seed`:
//   cv            cv.seed, or the master seed itself
//   train         {4}: validation holdout, {5}: model initialisation
//   phantoms      {6}
//   mae-train     {7}: model initialisation, {8}: epoch order and masks
enum SeedStream : std::uint64_t { kTrainHoldout = 4, kTrainFit = 5, kPhantoms = 6, kMaeInit = 7, kMaeTrain = 8 };

struct Context {
  RunConfig config;
  std::string hash;
  unsigned workers = 1;
  std::ostream& out;
};

inline std::string display_name(models::ModelKind k) {
  switch (k) {
    case models::ModelKind::Dsm:
      return "DSM";
    case models::ModelKind::Nfg:
      return "NFG";
    case models::ModelKind::DeepHit:
      return "DeepHit";
  }
  return "?";
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
  if (!os) throw DataError("failed writing " + p.string());
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// `<file>.json` next to a data file.
inline fs::path sidecar(const fs::path& p) {
  auto s = p;
  s += ".json";
  return s;
}

inline void write_features(const fs::path& p, const features::FeatureMatrix& m, const Context& ctx, json meta) {
  std::ostringstream os;
  features::write_feature_csv(os, m);
  write_text(p, os.str());
  meta["config_hash"] = ctx.hash;
  write_json(sidecar(p), meta);
}

/// Risk names come from the cohort sidecar when one exists.
inline cohort::Cohort read_cohort(const fs::path& p) {
  std::vector<std::string> risks;
  if (fs::exists(sidecar(p))) {
    auto j = read_json_file(sidecar(p));
    if (j.contains("risk_names")) risks = j.at("risk_names").get<std::vector<std::string>>();
  }
  return cohort::read_cohort_csv(p, risks);
}

struct LoadedData {
  cohort::Cohort cohort;
  std::vector<std::string> categories;  ///< per feature column, for PCA
};

/// Cohort from data.cohort or data.synthetic, with its features replaced by
/// the fused data.features files when any are given.
inline LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  if (!c.data.cohort.empty()) {
    d.cohort = read_cohort(c.data.cohort);
  } else if (c.data.synthetic) {
    d.cohort = cohort::generate_synthetic(*c.data.synthetic);
  } else {
    throw ConfigError("either data.cohort or data.synthetic is required");
  }
  auto m = features::from_cohort(d.cohort);
  if (!c.data.features.empty()) {
    m = features::FeatureMatrix(d.cohort.size(), {});
    m.set_ids(d.cohort.ids());
    for (auto& f : c.data.features) {
      auto part = features::align_rows(features::read_feature_csv(f), d.cohort.ids());
      m = features::fuse_concat(m, part, "", fs::path(f).stem().string());
    }
    d.cohort = features::with_features(d.cohort, m);
  }
  if (d.cohort.dim() == 0) throw DataError("cohort has no feature columns; set data.features");
  if (!c.data.categories.empty()) {
    features::apply_category_map(m, read_json_file(c.data.categories));
    d.categories = m.categories();
  } else {
    d.categories.assign(m.cols(), "all");
  }
  return d;
}

inline pipeline::FoldTransform fold_transform(const RunConfig& c, const LoadedData& d) {
  if (c.features.pca_components > 0) return pipeline::pca_transform(d.categories, c.features.pca_components);
  return c.features.standardize ? pipeline::standardize_transform() : pipeline::identity_transform();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_synth(Context& ctx, fs::path out) {
  const auto& c = ctx.config;
  if (!c.data.synthetic) throw ConfigError("synth needs data.synthetic");
  if (out.empty()) out = c.output_dir() / "cohort.csv";
  auto co = cohort::generate_synthetic(*c.data.synthetic);
  std::ostringstream os;
  cohort::write_cohort_csv(os, co);
  write_text(out, os.str());
  write_json(sidecar(out),
             {{"config_hash", ctx.hash}, {"risk_names", co.risk_names}, {"spec", cohort::to_json(*c.data.synthetic)}});
  auto counts = co.stratum_counts();
  ctx.out << "wrote " << out.string() << ": " << co.size() << " subjects";
  for (std::size_t s = 0; s < counts.size(); ++s) ctx.out << ", " << co.stratum_name(static_cast<int>(s)) << " " << counts[s];
  ctx.out << "\n";
}

struct LabelArgs {
  std::string records, imaging, codes, censor_date;
  fs::path out;
};

inline void cmd_label(Context& ctx, LabelArgs a) {
  auto censor = cohort::require_date(a.censor_date, "--censor-date");
  auto codes = cohort::read_code_sets(a.codes);
  auto records = cohort::read_records_csv(a.records);
  auto imaging = cohort::read_imaging_csv(a.imaging);
  auto res = cohort::build_labels(records, imaging, codes, censor);
  if (a.out.empty()) a.out = ctx.config.output_dir() / "labels.csv";
  std::ostringstream os;
  cohort::write_cohort_csv(os, res.cohort);
  write_text(a.out, os.str());
  const auto& r = res.report;
  json report = {{"excluded_prior_or_window", r.excluded_prior_or_window},
                 {"excluded_ambiguous", r.excluded_ambiguous},
                 {"skipped_no_imaging", r.skipped_no_imaging},
                 {"ignored_records", r.ignored_records},
                 {"censored", r.censored},
                 {"events_per_risk", r.events_per_risk}};
  write_json(sidecar(a.out), {{"config_hash", ctx.hash}, {"risk_names", res.cohort.risk_names}, {"report", report}});
  ctx.out << "excluded (event before imaging or within window): " << r.excluded_prior_or_window << "\n"
          << "excluded (same-day events of two risks): " << r.excluded_ambiguous << "\n"
          << "skipped (no imaging visit): " << r.skipped_no_imaging << "\n"
          << "ignored records (code outside every set): " << r.ignored_records << "\n"
          << "censored: " << r.censored << "\n";
  for (std::size_t k = 0; k < r.events_per_risk.size(); ++k) {
    ctx.out << "events " << res.cohort.risk_names[k] << ": " << r.events_per_risk[k] << "\n";
  }
  ctx.out << "wrote " << a.out.string() << ": " << res.cohort.size() << " subjects\n";
}

struct FeatureArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> prefixes;
  std::string fit;  ///< matrix the transform is fitted on; defaults to the input
  std::string categories;
  std::size_t components = 10;
  fs::path out;
};

inline void cmd_features_standardize(Context& ctx, const FeatureArgs& a) {
  if (a.inputs.size() != 1) throw ConfigError("standardize takes exactly one --in");
  auto in = features::read_feature_csv(a.inputs[0]);
  auto fit = a.fit.empty() ? in : features::read_feature_csv(a.fit);
  auto res = features::standardize_fit_apply(fit, {in});
  write_features(a.out, res.others[0], ctx, {{"op", "standardize"}, {"fit", a.fit.empty() ? a.inputs[0] : a.fit}});
  ctx.out << "wrote " << a.out.string() << ": " << in.rows() << " x " << in.cols() << "\n";
}

inline void cmd_features_pca(Context& ctx, const FeatureArgs& a) {
  if (a.inputs.size() != 1) throw ConfigError("pca takes exactly one --in");
  auto in = features::read_feature_csv(a.inputs[0]);
  auto fit = a.fit.empty() ? in : features::read_feature_csv(a.fit);
  if (a.categories.empty()) {
    in.set_categories(std::vector<std::string>(in.cols(), "all"));
    fit.set_categories(std::vector<std::string>(fit.cols(), "all"));
  } else {
    auto map = read_json_file(a.categories);
    features::apply_category_map(in, map);
    features::apply_category_map(fit, map);
  }
  auto st = features::standardize_fit_apply(fit, {in});
  auto model = features::pca_fit(st.train, a.components);
  auto reduced = features::pca_apply(model, st.others[0]);
  write_features(a.out, reduced, ctx,
                 {{"op", "pca"}, {"components", a.components}, {"fit", a.fit.empty() ? a.inputs[0] : a.fit},
                  {"model", features::to_json(model)}});
  ctx.out << "wrote " << a.out.string() << ": " << reduced.rows() << " x " << reduced.cols() << "\n";
}

inline void cmd_features_fuse(Context& ctx, const FeatureArgs& a) {
  if (a.inputs.size() < 2) throw ConfigError("fuse needs at least two --in files");
  if (!a.prefixes.empty() && a.prefixes.size() != a.inputs.size()) {
    throw ConfigError("fuse needs one --prefix per --in");
  }
  auto prefix = [&](std::size_t i) {
    return a.prefixes.empty() ? fs::path(a.inputs[i]).stem().string() : a.prefixes[i];
  };
  auto fused = features::read_feature_csv(a.inputs[0]);
  const auto ids = fused.ids();
  features::FeatureMatrix m(fused.rows(), {});
  m.set_ids(ids);
  m = features::fuse_concat(m, fused, "", prefix(0));
  for (std::size_t i = 1; i < a.inputs.size(); ++i) {
    m = features::fuse_concat(m, features::align_rows(features::read_feature_csv(a.inputs[i]), ids), "", prefix(i));
  }
  write_features(a.out, m, ctx, {{"op", "fuse"}, {"inputs", a.inputs}});
  ctx.out << "wrote " << a.out.string() << ": " << m.rows() << " x " << m.cols() << "\n";
}

/// One fit with early stopping on a stratified holdout; preprocessing is
/// fitted on the training part only.
inline void cmd_train(Context& ctx) {
  const auto& c = ctx.config;
  auto d = load_data(c);
  auto split = cohort::holdout_split(d.cohort, c.cv.inner_fraction, derive_seed(c.seed, {kTrainHoldout}));
  auto fold = fold_transform(c, d)(d.cohort.subset(split.train), d.cohort.subset(split.valid));
  auto fit = pipeline::train_with_early_stopping(c.model, fold.train, fold.test, derive_seed(c.seed, {kTrainFit}));
  auto ctd = metrics::model_ctd_all(*fit.model, fold.test, std::numeric_limits<double>::quiet_NaN(), ctx.workers);
  const auto ckpt = c.output_dir() / "model.ckpt";
  fs::create_directories(c.output_dir());
  models::save_model(*fit.model, ckpt);
  json per_risk = json::array();
  for (std::size_t r = 0; r < ctd.size(); ++r) per_risk.push_back(metrics::to_json(ctd[r], fold.test.risk_names[r]));
  const auto& h = fit.history;
  write_json(c.output_dir() / "train.json", {{"config_hash", ctx.hash},
                                             {"config", to_json(c)},
                                             {"train_size", fold.train.size()},
                                             {"valid_size", fold.test.size()},
                                             {"best_epoch", h.best_epoch},
                                             {"stopped_early", h.stopped_early},
                                             {"train_loss", h.train_loss},
                                             {"valid_loss", h.valid_loss},
                                             {"valid_ctd", per_risk}});
  ctx.out << "best epoch " << h.best_epoch << " of " << h.epochs() << "\n";
  for (std::size_t r = 0; r < ctd.size(); ++r) {
    ctx.out << "validation C^td " << fold.test.risk_names[r] << ": " << ctd[r].ctd << "\n";
  }
  ctx.out << "wrote " << ckpt.string() << "\n";
}

inline void cmd_cv(Context& ctx) {
  const auto& c = ctx.config;
  auto d = load_data(c);
  const auto preset = pipeline::preset_by_name(c.cv.preset);
  auto kinds = c.cv.models;
  if (kinds.empty()) kinds.push_back(c.model.kind);
  const auto dir = c.output_dir();
  fs::create_directories(dir);

  std::vector<pipeline::CVReport> reports;
  json audits = json::object();
  for (auto kind : kinds) {
    auto base = c.model;
    base.kind = kind;
    base.max_epochs = c.cv.max_epochs.value_or(preset.max_epochs);
    pipeline::LeakageAudit audit;
    pipeline::CvOptions o;
    o.k = c.cv.k.value_or(preset.folds);
    o.n_iter = c.cv.n_iter.value_or(preset.n_iter);
    o.inner_fraction = c.cv.inner_fraction;
    o.seed = c.cv_seed();
    o.workers = ctx.workers;
    o.transform = fold_transform(c, d);
    o.audit = &audit;
    o.checkpoint_dir = dir / "checkpoints" / models::kind_name(kind);
    o.label = c.data.modality + " / " + display_name(kind);
    ctx.out << o.label << ": " << o.k << " folds, " << o.n_iter << " search iterations\n" << std::flush;
    reports.push_back(pipeline::nested_cv(d.cohort, base, c.grid, o));
    audits[models::kind_name(kind)] = audit.summary();
    if (audit.test_id_occurrences() != 0) throw DataError("leakage audit found test subjects in a fit");
  }
  auto table = pipeline::emit_report(reports, "C^td per risk: mean (95% CI)");
  json jr = json::array();
  for (auto& r : reports) jr.push_back(pipeline::to_json(r));
  write_json(dir / "report.json", {{"config_hash", ctx.hash},
                                   {"config", to_json(c)},
                                   {"reports", jr},
                                   {"table", pipeline::to_json(table)},
                                   {"audit", audits}});
  write_text(dir / "report.md", pipeline::to_markdown(table) + "\nconfig hash: " + ctx.hash + "\n");
  ctx.out << pipeline::to_markdown(table) << "wrote " << (dir / "report.json").string() << "\n";
}

struct VolumeSet {
  std::vector<std::string> ids;
  std::vector<mae::Volume4D> volumes;
};

inline VolumeSet load_volumes(const RunConfig& c, const std::string& dir_override = "") {
  VolumeSet s;
  const std::string dir = dir_override.empty() ? c.mae.volumes : dir_override;
  if (!dir.empty()) {
    for (auto& p : mae::list_volumes(dir)) {
      s.ids.push_back(p.stem().string());
      s.volumes.push_back(mae::read_volume(p));
    }
    if (s.volumes.empty()) throw DataError("no .rbvl volumes in " + dir);
  } else if (c.mae.phantoms > 0) {
    s.volumes = mae::make_phantoms(c.mae.phantoms, c.mae.phantom_dims, derive_seed(c.seed, {kPhantoms}));
    for (std::size_t i = 0; i < s.volumes.size(); ++i) s.ids.push_back("phantom" + std::to_string(i + 1));
  } else {
    throw ConfigError("set mae.volumes or mae.phantoms");
  }
  return s;
}

inline void cmd_mae_train(Context& ctx) {
  const auto& c = ctx.config;
  auto vols = load_volumes(c);
  mae::MaeModel model(c.mae.config, derive_seed(c.seed, {kMaeInit}));
  auto grids = mae::prepare_all(model, vols.volumes);
  const auto ckpt = c.mae_checkpoint();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  ctx.out << "training on " << vols.volumes.size() << " volumes for " << c.mae.config.steps << " steps\n" << std::flush;
  auto h = mae::train_mae(model, grids, derive_seed(c.seed, {kMaeTrain}), ckpt);
  mae::save_mae(model, ckpt);
  write_json(c.output_dir() / "mae_history.json", {{"config_hash", ctx.hash},
                                                    {"config", to_json(c)},
                                                    {"volumes", vols.ids},
                                                    {"checkpoint", ckpt.string()},
                                                    {"history", mae::to_json(h)}});
  if (!h.step_loss.empty()) {
    ctx.out << "masked-patch loss " << h.step_loss.front() << " -> " << h.step_loss.back() << "\n";
  }
  ctx.out << "wrote " << ckpt.string() << "\n";
}

inline void cmd_embed(Context& ctx, const std::string& volumes_dir, fs::path out) {
  const auto& c = ctx.config;
  const auto ckpt = c.mae_checkpoint();
  if (!fs::exists(ckpt)) throw DataError("MAE checkpoint not found: " + ckpt.string());
  auto model = mae::load_mae(ckpt);
  auto vols = load_volumes(c, volumes_dir);
  const std::size_t D = model->config().dim;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < D; ++j) names.push_back("mae" + std::to_string(j + 1));
  features::FeatureMatrix m(vols.volumes.size(), names);
  for (std::size_t i = 0; i < vols.volumes.size(); ++i) {
    auto e = model->embedding(vols.volumes[i]);
    for (std::size_t j = 0; j < D; ++j) m(i, j) = e[j];
  }
  m.set_ids(vols.ids);
  if (!m.all_finite()) throw NumericError("non-finite embedding");
  if (out.empty()) out = c.output_dir() / "embeddings.csv";
  write_features(out, m, ctx, {{"op", "embed"}, {"checkpoint", ckpt.string()}});
  ctx.out << "wrote " << out.string() << ": " << m.rows() << " x " << D << "\n";
}

/// Merges the reports of several cv runs into one table.
inline void cmd_report(Context& ctx, const std::vector<std::string>& inputs, const std::string& title) {
  if (inputs.empty()) throw ConfigError("report needs at least one --in");
  std::vector<pipeline::CVReport> reports;
  json sources = json::array();
  for (auto& p : inputs) {
    auto j = read_json_file(p);
    try {
      if (j.contains("reports")) {
        for (auto& r : j.at("reports")) reports.push_back(pipeline::cv_report_from_json(r));
      } else {
        reports.push_back(pipeline::cv_report_from_json(j));
      }
    } catch (const json::exception& e) {
      throw DataError(p + ": not a cv report: " + e.what());
    }
    sources.push_back({{"path", p}, {"config_hash", j.value("config_hash", "")}});
  }
  auto table = pipeline::emit_report(reports, title);
  const auto dir = ctx.config.output_dir();
  write_json(dir / "table.json", {{"config_hash", ctx.hash}, {"sources", sources}, {"table", pipeline::to_json(table)}});
  write_text(dir / "table.md", pipeline::to_markdown(table) + "\nconfig hash: " + ctx.hash + "\n");
  ctx.out << pipeline::to_markdown(table);
}

}  // namespace crisk::cli
