#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "crisk/cli/app.hpp"

namespace fs = std::filesystem;
using namespace crisk;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "crisk");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("crisk_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }

  static std::string slurp(const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  }

  std::string cv_config(const std::string& out) const {
    json j = {{"seed", 3},
              {"data",
               {{"synthetic",
                 {{"n", 240},
                  {"d", 3},
                  {"shapes", {1.5, 1.0}},
                  {"scales", {8.0, 10.0}},
                  {"betas", {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}},
                  {"horizon", 12.0},
                  {"seed", 5}}},
                {"modality", "synthetic"}}},
              {"model", {{"kind", "dsm"}, {"warmup_iterations", 20}}},
              {"grid", {{"learning_rate", {1e-3, 1e-2}}, {"batch_size", {64, 128}}, {"layers", {1, 1}}, {"nodes", {16}}}},
              {"cv", {{"k", 3}, {"n_iter", 3}, {"max_epochs", 8}, {"models", {"dsm", "nfg"}}}},
              {"output", {{"dir", path(out)}}}};
    return write(out + ".json", j.dump());
  }

  fs::path dir_;
};

std::string hash_line(const std::string& out) {
  auto pos = out.find("config hash: ");
  return pos == std::string::npos ? "" : out.substr(pos + 13, 16);
}

}  // namespace

TEST(RunConfig, DefaultsResolveAndHashIsStable) {
  auto a = cli::run_config_from_json(json::object());
  auto b = cli::run_config_from_json(json::object());
  EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
  EXPECT_EQ(cli::config_hash(a).size(), 16u);
  EXPECT_EQ(a.cv.preset, "desk");
  EXPECT_EQ(a.cv_seed(), 0u);
  // Equivalent documents resolve to the same hash; a changed value does not.
  auto c = cli::run_config_from_json({{"cv", {{"preset", "desk"}}}});
  EXPECT_EQ(cli::config_hash(a), cli::config_hash(c));
  auto d = cli::run_config_from_json({{"cv", {{"seed", 7}}}});
  EXPECT_NE(cli::config_hash(a), cli::config_hash(d));
}

TEST(RunConfig, UnknownKeysRejectedEverywhere) {
  for (auto j : {json{{"bogus", 1}}, json{{"data", {{"bogus", 1}}}}, json{{"features", {{"bogus", 1}}}},
                 json{{"model", {{"bogus", 1}}}}, json{{"grid", {{"bogus", 1}}}}, json{{"cv", {{"bogus", 1}}}},
                 json{{"mae", {{"bogus", 1}}}}, json{{"output", {{"bogus", 1}}}}}) {
    EXPECT_THROW(cli::run_config_from_json(j), ConfigError) << j.dump();
  }
  EXPECT_THROW(cli::run_config_from_json({{"cv", {{"preset", "huge"}}}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"cv", {{"k", 1}}}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"seed", "x"}}), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"mae", {{"dim", 30}, {"heads", 4}}}}), ConfigError);
}

TEST(RunConfig, OverrideGrammar) {
  json doc = {{"cv", {{"k", 5}}}};
  cli::apply_override(doc, "cv.seed=7");
  cli::apply_override(doc, "model.kind=deephit");
  cli::apply_override(doc, "grid.nodes=[32,64]");
  cli::apply_override(doc, "output.dir=a=b");
  EXPECT_EQ(doc["cv"]["seed"], 7);
  EXPECT_EQ(doc["cv"]["k"], 5);
  EXPECT_EQ(doc["model"]["kind"], "deephit");
  EXPECT_EQ(doc["grid"]["nodes"], json({32, 64}));
  EXPECT_EQ(doc["output"]["dir"], "a=b");
  auto c = cli::run_config_from_json(doc);
  EXPECT_EQ(c.cv_seed(), 7u);
  EXPECT_EQ(c.model.kind, models::ModelKind::DeepHit);
  EXPECT_THROW(cli::apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(cli::apply_override(doc, "cv..k=1"), ConfigError);
  EXPECT_THROW(cli::apply_override(doc, "cv.k.x=1"), ConfigError);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"nonsense"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"cv", "--set", "cv.bogus=1"}).code, 2);
  EXPECT_EQ(run({"cv", "--set", "model.learning_rate=abc"}).code, 2);
  EXPECT_EQ(run({"cv", "--set", "data.cohort=" + path("missing.csv")}).code, 3);
  EXPECT_EQ(run({"cv", "--set", "output.dir=" + path("o")}).code, 2);  // no data source
  // Every trial diverges: numeric failure.
  auto cfg = cv_config("numeric");
  auto r = run({"cv", "-c", cfg, "--set", "cv.models=[\"dsm\"]", "--set", "grid.learning_rate_values=[1e300]",
                "--set", "model.warmup_iterations=0"});
  EXPECT_EQ(r.code, 4) << r.out << r.err;
  EXPECT_NE(r.err.find("numeric failure"), std::string::npos);
}

TEST_F(CliTest, SynthWritesCsvAndSpecSidecar) {
  auto cfg = cv_config("synth");
  auto a = run({"synth", "-c", cfg, "--set", "data.synthetic.n=100", "-o", path("a.csv")});
  auto b = run({"synth", "-c", cfg, "--set", "data.synthetic.n=100", "-o", path("b.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const auto text = slurp(path("a.csv"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 101);
  EXPECT_EQ(text, slurp(path("b.csv")));
  EXPECT_FALSE(hash_line(a.out).empty());

  // The sidecar reproduces the generating spec, hence the oracle CIF.
  auto side = json::parse(slurp(path("a.csv.json")));
  EXPECT_EQ(side["config_hash"], hash_line(a.out));
  auto spec = cohort::synth_spec_from_json(side["spec"]);
  auto cfg_spec = cli::load_run_config(cfg, {"data.synthetic.n=100"}).data.synthetic.value();
  auto cohort = cohort::read_cohort_csv(path("a.csv"));
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& x = cohort.subjects[i].x;
    for (int r = 1; r <= 2; ++r) {
      EXPECT_EQ(cohort::oracle_cif(spec, x, 5.0, r), cohort::oracle_cif(cfg_spec, x, 5.0, r));
    }
  }
  EXPECT_EQ(cohort::generate_synthetic(spec).subjects.size(), 100u);
}

TEST_F(CliTest, LabelToyMatchesHandDerivation) {
  auto rec = write("rec.csv",
                   "id,code,date\n"
                   "p1,I21,2016-01-01\n"
                   "p1,E11,2017-01-01\n"
                   "p2,E11,2015-03-01\n"
                   "p3,I21,2018-01-01\n"
                   "p3,E11,2018-01-01\n"
                   "p4,E11,2017-03-01\n"
                   "p5,Z00,2016-01-01\n"
                   "q1,I21,2016-01-01\n");
  auto img = write("img.csv", "id,date\np1,2015-01-01\np2,2015-01-01\np3,2015-01-01\np4,2016-03-01\np5,2015-06-30\n");
  auto codes = write("codes.json", R"({"CVD": ["I21"], "T2D": ["E11"]})");
  auto r = run({"label", "--records", rec, "--imaging", img, "--codes", codes, "--censor-date", "2020-01-01", "-o",
                path("labels.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("excluded (event before imaging or within window): 1"), std::string::npos);
  EXPECT_NE(r.out.find("excluded (same-day events of two risks): 1"), std::string::npos);
  EXPECT_NE(r.out.find("skipped (no imaging visit): 1"), std::string::npos);
  EXPECT_NE(r.out.find("ignored records (code outside every set): 1"), std::string::npos);
  EXPECT_NE(r.out.find("censored: 1"), std::string::npos);

  // p1: CVD 365 days after imaging; p2: inside the 92-day window; p3: two
  // risks on one day; p4: T2D after 365 days; p5: censored after 1646 days.
  auto c = cli::read_cohort(path("labels.csv"));
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.risk_names, (std::vector<std::string>{"CVD", "T2D"}));
  EXPECT_EQ(c.subjects[0].id, "p1");
  EXPECT_EQ(c.subjects[0].event, 1);
  EXPECT_DOUBLE_EQ(c.subjects[0].time, 365.0 / 365.25);
  EXPECT_EQ(c.subjects[1].id, "p4");
  EXPECT_EQ(c.subjects[1].event, 2);
  EXPECT_DOUBLE_EQ(c.subjects[1].time, 365.0 / 365.25);
  EXPECT_EQ(c.subjects[2].id, "p5");
  EXPECT_EQ(c.subjects[2].event, 0);
  EXPECT_DOUBLE_EQ(c.subjects[2].time, 1646.0 / 365.25);
}

TEST_F(CliTest, LabelEdgeCases) {
  auto img = write("img.csv", "id,date\na,2015-01-01\nb,2016-01-01\n");
  auto codes = write("codes.json", R"({"CVD": ["I21"]})");
  auto empty = write("empty.csv", "id,code,date\n");
  auto r = run({"label", "--records", empty, "--imaging", img, "--codes", codes, "--censor-date", "2020-01-01", "-o",
                path("l.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto c = cli::read_cohort(path("l.csv"));
  ASSERT_EQ(c.size(), 2u);
  for (auto& s : c.subjects) EXPECT_EQ(s.event, 0);

  auto bad = write("bad.csv", "id,code,date\na,I21,2016-01-01\na,I21,2016/02/01\n");
  r = run({"label", "--records", bad, "--imaging", img, "--codes", codes, "--censor-date", "2020-01-01", "-o",
           path("l2.csv")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("bad.csv:3"), std::string::npos) << r.err;

  r = run({"label", "--records", empty, "--imaging", img, "--codes", codes, "--censor-date", "2020-02-30"});
  EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, FeatureTransforms) {
  auto a = write("tab.csv", "id,u,v\ns1,1,10\ns2,2,20\ns3,3,40\ns4,6,10\n");
  auto b = write("img.csv", "id,p\ns4,0.4\ns3,0.3\ns2,0.2\ns1,0.1\n");
  ASSERT_EQ(run({"features", "standardize", "-i", a, "-o", path("std.csv")}).code, 0);
  auto st = features::read_feature_csv(path("std.csv"));
  // Column u: mean 3, population sd sqrt(14/4).
  EXPECT_NEAR(st(0, 0), (1.0 - 3.0) / std::sqrt(14.0 / 4.0), 1e-12);
  EXPECT_EQ(st.ids(), (std::vector<std::string>{"s1", "s2", "s3", "s4"}));

  ASSERT_EQ(run({"features", "pca", "-i", a, "-m", "1", "-o", path("pca.csv")}).code, 0);
  EXPECT_EQ(features::read_feature_csv(path("pca.csv")).cols(), 1u);

  ASSERT_EQ(run({"features", "fuse", "-i", a, "-i", b, "--prefix", "tab", "--prefix", "mae", "-o", path("f.csv")}).code,
            0);
  auto f = features::read_feature_csv(path("f.csv"));
  EXPECT_EQ(f.names(), (std::vector<std::string>{"tab:u", "tab:v", "mae:p"}));
  EXPECT_DOUBLE_EQ(f(2, 2), 0.3);
  auto side = json::parse(slurp(path("f.csv.json")));
  EXPECT_EQ(side["config_hash"].get<std::string>().size(), 16u);

  auto missing = write("short.csv", "id,p\ns1,0.1\n");
  EXPECT_EQ(run({"features", "fuse", "-i", a, "-i", missing, "-o", path("g.csv")}).code, 3);
}

TEST_F(CliTest, TrainWritesCheckpoint) {
  auto cfg = cv_config("train");
  auto r = run({"train", "-c", cfg, "--set", "model.max_epochs=5"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = models::load_model(path("train") + "/model.ckpt");
  EXPECT_EQ(m->config().max_epochs, 5u);
  auto j = json::parse(slurp(path("train") + "/train.json"));
  EXPECT_EQ(j["config_hash"], hash_line(r.out));
  EXPECT_EQ(j["valid_ctd"].size(), 2u);
}

TEST_F(CliTest, CvReportDeterminism) {
  auto cfg = cv_config("cv");
  auto a = run({"cv", "-c", cfg, "--workers", "1"});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto report = slurp(path("cv") + "/report.json");
  const auto md = slurp(path("cv") + "/report.md");
  const auto ckpt = slurp(path("cv") + "/checkpoints/nfg/fold2.ckpt");
  ASSERT_FALSE(ckpt.empty());

  auto b = run({"cv", "-c", cfg, "--workers", "1"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(path("cv") + "/report.json"), report);
  EXPECT_EQ(slurp(path("cv") + "/report.md"), md);
  EXPECT_EQ(slurp(path("cv") + "/checkpoints/nfg/fold2.ckpt"), ckpt);

  auto c = run({"cv", "-c", cfg, "--workers", "3"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(json::parse(slurp(path("cv") + "/report.json")), json::parse(report));

  auto j = json::parse(report);
  EXPECT_EQ(j["config_hash"], hash_line(a.out));
  EXPECT_EQ(j["reports"].size(), 2u);
  EXPECT_EQ(j["audit"]["dsm"]["test_id_occurrences"], 0);
  EXPECT_NE(md.find(hash_line(a.out)), std::string::npos);
  // Cells read "mean (lo, hi)" and agree with the report summary.
  auto rep = pipeline::cv_report_from_json(j["reports"][0]);
  const auto& s = rep.summary[0];
  EXPECT_NE(md.find(pipeline::format_cell({s.mean, s.lo, s.hi, false})), std::string::npos);
  EXPECT_EQ(rep.label, "synthetic / DSM");
  EXPECT_EQ(rep.k, 3u);

  // A different cv seed changes the result.
  auto d = run({"cv", "-c", cfg, "--set", "cv.seed=99", "--set", "output.dir=" + path("cv_other")});
  ASSERT_EQ(d.code, 0);
  EXPECT_NE(hash_line(d.out), hash_line(a.out));
  EXPECT_NE(json::parse(slurp(path("cv_other") + "/report.json"))["reports"], j["reports"]);
}

TEST_F(CliTest, CvOnFusedFeatureFiles) {
  auto cfg = cv_config("fused");
  ASSERT_EQ(run({"synth", "-c", cfg, "-o", path("cohort.csv")}).code, 0);
  // Two modalities carved out of the cohort columns, in shuffled row order.
  auto c = cohort::read_cohort_csv(path("cohort.csv"));
  std::ofstream t(path("tab.csv")), m(path("img.csv"));
  t << "id,a,b\n";
  m << "id,c\n";
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& s = c.subjects[c.size() - 1 - i];
    t << s.id << ',' << s.x[0] << ',' << s.x[1] << '\n';
    m << c.subjects[i].id << ',' << c.subjects[i].x[2] << '\n';
  }
  t.close();
  m.close();
  write("cats.json", R"({"tab:a": "tab", "tab:b": "tab", "img:c": "img"})");
  auto r = run({"cv", "-c", cfg, "--set", "data.synthetic=null", "--set", "data.cohort=" + path("cohort.csv"), "--set",
                "data.features=[\"" + path("tab.csv") + "\",\"" + path("img.csv") + "\"]", "--set",
                "data.categories=" + path("cats.json"), "--set", "features.pca_components=1", "--set",
                "cv.models=[\"dsm\"]"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(slurp(path("fused") + "/report.json"));
  EXPECT_EQ(j["reports"][0]["risks"], json({"risk1", "risk2"}));
}

TEST_F(CliTest, ReportMergesRuns) {
  auto cfg = cv_config("r1");
  ASSERT_EQ(run({"cv", "-c", cfg, "--set", "cv.models=[\"dsm\"]"}).code, 0);
  ASSERT_EQ(run({"cv", "-c", cfg, "--set", "cv.models=[\"nfg\"]", "--set", "output.dir=" + path("r2")}).code, 0);
  auto r = run({"report", "-i", path("r1") + "/report.json", "-i", path("r2") + "/report.json", "--set",
                "output.dir=" + path("merged")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto t = pipeline::table_from_json(json::parse(slurp(path("merged") + "/table.json"))["table"]);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].label, "synthetic / DSM");
  EXPECT_EQ(t.rows[1].label, "synthetic / NFG");
  EXPECT_EQ(run({"report", "-i", write("junk.json", "{}")}).code, 3);
}

TEST_F(CliTest, MaeTrainAndEmbed) {
  auto cfg = write("mae.json", json{{"seed", 11},
                                    {"mae", {{"phantoms", 3}, {"steps", 6}, {"learning_rate", 1e-3}}},
                                    {"output", {{"dir", path("m")}}}}
                                   .dump());
  auto a = run({"mae-train", "-c", cfg, "--workers", "1"});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto ckpt = slurp(path("m") + "/mae.ckpt");
  const auto hist = slurp(path("m") + "/mae_history.json");
  ASSERT_EQ(run({"mae-train", "-c", cfg, "--workers", "1"}).code, 0);
  EXPECT_EQ(slurp(path("m") + "/mae.ckpt"), ckpt);
  EXPECT_EQ(slurp(path("m") + "/mae_history.json"), hist);
  EXPECT_EQ(json::parse(hist)["history"]["step_loss"].size(), 6u);

  auto e = run({"embed", "-c", cfg, "--set", "mae.phantoms=10"});
  ASSERT_EQ(e.code, 0) << e.err;
  auto m = features::read_feature_csv(path("m") + "/embeddings.csv");
  EXPECT_EQ(m.rows(), 10u);
  EXPECT_EQ(m.cols() + 1, 65u);
  EXPECT_EQ(m.ids()[0], "phantom1");
  const auto first = slurp(path("m") + "/embeddings.csv");
  ASSERT_EQ(run({"embed", "-c", cfg, "--set", "mae.phantoms=10"}).code, 0);
  EXPECT_EQ(slurp(path("m") + "/embeddings.csv"), first);

  // Volumes from a directory are keyed by file stem.
  fs::create_directories(path("vols"));
  mae::write_volume(path("vols") + "/subj7.rbvl", mae::make_phantoms(1, {30, 20, 20, 2}, 1)[0]);
  ASSERT_EQ(run({"embed", "-c", cfg, "--volumes", path("vols"), "-o", path("v.csv")}).code, 0);
  EXPECT_EQ(features::read_feature_csv(path("v.csv")).ids(), std::vector<std::string>{"subj7"});

  EXPECT_EQ(run({"embed", "-c", cfg, "--set", "mae.checkpoint=" + path("none.ckpt")}).code, 3);
  EXPECT_EQ(run({"mae-train", "--set", "output.dir=" + path("x")}).code, 2);  // no volumes configured
}
