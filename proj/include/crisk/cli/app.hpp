#pragma once

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crisk/cli/commands.hpp"

namespace crisk::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Parses the command line, resolves the config and runs one subcommand.
/// Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"crisk: competing-risk survival from imaging and tabular features"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::string config_path;
  std::vector<std::string> overrides;
  unsigned workers = 1;
  auto common = [&](CLI::App* s) {
    s->add_option("-c,--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
    s->add_option("--set", overrides, "Override a config key, e.g. cv.seed=7 (repeatable)")->allow_extra_args(false);
    s->add_option("--workers", workers, "Worker threads for the job pool")->check(CLI::PositiveNumber);
    s->add_option("--preset", "Shorthand for --set cv.preset=<name>")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->each([&](const std::string& p) { overrides.insert(overrides.begin(), "cv.preset=" + p); });
    return s;
  };

  fs::path out_path;
  auto* synth = common(app.add_subcommand("synth", "Simulate a competing-risk cohort from data.synthetic"));
  synth->add_option("-o,--out", out_path, "Cohort CSV (default <output.dir>/cohort.csv)");

  LabelArgs label_args;
  auto* label = common(app.add_subcommand("label", "Derive first-event labels from diagnosis records"));
  label->add_option("--records", label_args.records, "id,code,date CSV")->required();
  label->add_option("--imaging", label_args.imaging, "id,date CSV")->required();
  label->add_option("--codes", label_args.codes, "Risk name -> code list JSON")->required();
  label->add_option("--censor-date", label_args.censor_date, "Administrative censoring date (YYYY-MM-DD)")->required();
  label->add_option("-o,--out", label_args.out, "Cohort CSV (default <output.dir>/labels.csv)");

  FeatureArgs feat_args;
  auto* feats = app.add_subcommand("features", "Feature-table transforms");
  feats->require_subcommand(1);
  auto* standardize = common(feats->add_subcommand("standardize", "Zero mean, unit variance"));
  auto* pca = common(feats->add_subcommand("pca", "Standardize, then per-category PCA"));
  auto* fuse = common(feats->add_subcommand("fuse", "Concatenate tables joined on id"));
  for (auto* s : {standardize, pca, fuse}) {
    s->add_option("-i,--in", feat_args.inputs, "Feature CSV (id column first)")->required();
    s->add_option("-o,--out", feat_args.out, "Output CSV")->required();
  }
  for (auto* s : {standardize, pca}) s->add_option("--fit", feat_args.fit, "Fit on this table instead of --in");
  pca->add_option("--categories", feat_args.categories, "Column -> category JSON (default: one category)");
  pca->add_option("-m,--components", feat_args.components, "Components per category")->check(CLI::PositiveNumber);
  fuse->add_option("--prefix", feat_args.prefixes, "Column prefix per input (default: file stem)");

  auto* train = common(app.add_subcommand("train", "Fit model.* once with early stopping"));
  auto* cv = common(app.add_subcommand("cv", "Nested cross-validation with random search"));

  auto* mae_train = common(app.add_subcommand("mae-train", "Pretrain the masked autoencoder"));
  std::string embed_dir;
  auto* embed = common(app.add_subcommand("embed", "Extract MAE embeddings to CSV"));
  embed->add_option("--volumes", embed_dir, "Directory of .rbvl volumes (default mae.volumes)");
  embed->add_option("-o,--out", out_path, "Embeddings CSV (default <output.dir>/embeddings.csv)");

  std::vector<std::string> report_inputs;
  std::string title = "C^td per risk: mean (95% CI)";
  auto* report = common(app.add_subcommand("report", "Merge cv reports into one table"));
  report->add_option("-i,--in", report_inputs, "report.json files")->required();
  report->add_option("--title", title, "Table title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    Context ctx{load_run_config(config_path, overrides), "", workers, out};
    ctx.hash = config_hash(ctx.config);
    out << "config hash: " << ctx.hash << "\n";
    if (*synth) cmd_synth(ctx, out_path);
    else if (*label) cmd_label(ctx, label_args);
    else if (*standardize) cmd_features_standardize(ctx, feat_args);
    else if (*pca) cmd_features_pca(ctx, feat_args);
    else if (*fuse) cmd_features_fuse(ctx, feat_args);
    else if (*train) cmd_train(ctx);
    else if (*cv) cmd_cv(ctx);
    else if (*mae_train) cmd_mae_train(ctx);
    else if (*embed) cmd_embed(ctx, embed_dir, out_path);
    else if (*report) cmd_report(ctx, report_inputs, title);
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace crisk::cli
