#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "crisk/cohort.hpp"

using namespace crisk::cohort;

namespace {

Date d(const char* s) { return *parse_date(s); }

Cohort strata_cohort(const std::vector<std::size_t>& counts) {
  Cohort c;
  c.risk_names = default_risk_names(static_cast<int>(counts.size()) - 1);
  std::size_t id = 0;
  for (std::size_t e = 0; e < counts.size(); ++e)
    for (std::size_t i = 0; i < counts[e]; ++i)
      c.subjects.push_back({"s" + std::to_string(id++), {}, 1.0 + static_cast<double>(i), static_cast<int>(e)});
  return c;
}

SynthSpec two_risk_spec() {
  SynthSpec s;
  s.n = 5000;
  s.d = 2;
  s.shapes = {0.8, 2.0};
  s.scales = {6.0, 4.0};
  s.betas = {{0.7, 0.0}, {0.0, -0.5}};
  s.horizon = 1e12;
  s.seed = 17;
  return s;
}

}  // namespace

// --------------------------------------------------------------------------
// Labels
// --------------------------------------------------------------------------

TEST(Labels, EventTwoMonthsAfterImagingExcludes) {
  CodeSets codes = {{"cvd", {"I21"}}};
  auto res = build_labels({{"a", "I21", d("2015-03-01")}}, {{"a", d("2015-01-01")}}, codes,
                          d("2020-01-01"));
  EXPECT_TRUE(res.cohort.empty());
  EXPECT_EQ(res.report.excluded_prior_or_window, 1u);
}

TEST(Labels, NoEventsIsCensoredAtCensorDate) {
  CodeSets codes = {{"cvd", {"I21"}}};
  auto res = build_labels({}, {{"a", d("2015-01-01")}}, codes, d("2019-01-01"));
  ASSERT_EQ(res.cohort.size(), 1u);
  EXPECT_EQ(res.cohort.subjects[0].event, 0);
  EXPECT_NEAR(res.cohort.subjects[0].time, 4.0, 1e-12);
}

TEST(Labels, ExclusionWindowIsExactly92Days) {
  CodeSets codes = {{"cvd", {"I21"}}};
  const Date img = d("2016-01-01");
  auto at = [&](int days) {
    return build_labels({{"a", "I21", img + std::chrono::days{days}}}, {{"a", img}}, codes,
                        d("2022-01-01"));
  };
  EXPECT_TRUE(at(92).cohort.empty());
  ASSERT_EQ(at(93).cohort.size(), 1u);
  EXPECT_EQ(at(93).cohort.subjects[0].event, 1);
  EXPECT_NEAR(at(93).cohort.subjects[0].time, 93.0 / 365.25, 1e-12);
}

// Six subjects, two risks, worked out by hand:
//   a: T2D 2017-06-01, CVD later          -> risk 2 (t2d), t = 2017-06-01 - 2016-01-01
//   b: CVD 2015-12-01 (before imaging)    -> excluded
//   c: nothing                            -> censored, t = 2020-01-01 - 2016-02-01
//   d: CVD 2016-03-01 (within 92 days)    -> excluded
//   e: CVD 2018-01-01 and T2D same day    -> excluded (ambiguous first event)
//   f: unrelated code only, CVD 2019-05-05 -> risk 1 (cvd)
TEST(Labels, HandBuiltTableMatchesManualRules) {
  CodeSets codes = {{"cvd", {"I21", "I63"}}, {"t2d", {"E11"}}};
  std::vector<DiagnosisRecord> recs = {
      {"a", "I21", d("2018-02-02")}, {"a", "E11", d("2017-06-01")},
      {"b", "I63", d("2015-12-01")}, {"b", "E11", d("2018-01-01")},
      {"d", "I21", d("2016-03-01")}, {"e", "I21", d("2018-01-01")},
      {"e", "E11", d("2018-01-01")}, {"f", "Z99", d("2016-06-01")},
      {"f", "I63", d("2019-05-05")}, {"zz", "I21", d("2018-01-01")},
  };
  std::vector<ImagingVisit> img = {{"a", d("2016-01-01")}, {"b", d("2016-01-01")},
                                   {"c", d("2016-02-01")}, {"d", d("2016-01-01")},
                                   {"e", d("2016-01-01")}, {"f", d("2016-01-01")}};
  auto res = build_labels(recs, img, codes, d("2020-01-01"));
  ASSERT_EQ(res.cohort.size(), 3u);
  const auto& s = res.cohort.subjects;
  EXPECT_EQ(s[0].id, "a");
  EXPECT_EQ(s[0].event, 2);
  EXPECT_NEAR(s[0].time, 517.0 / 365.25, 1e-12);
  EXPECT_EQ(s[1].id, "c");
  EXPECT_EQ(s[1].event, 0);
  EXPECT_NEAR(s[1].time, 1430.0 / 365.25, 1e-12);
  EXPECT_EQ(s[2].id, "f");
  EXPECT_EQ(s[2].event, 1);
  EXPECT_NEAR(s[2].time, 1220.0 / 365.25, 1e-12);
  EXPECT_EQ(res.report.excluded_prior_or_window, 2u);
  EXPECT_EQ(res.report.excluded_ambiguous, 1u);
  EXPECT_EQ(res.report.skipped_no_imaging, 1u);
  EXPECT_EQ(res.report.ignored_records, 1u);
  EXPECT_EQ(res.report.censored, 1u);
  EXPECT_EQ(res.report.events_per_risk, (std::vector<std::size_t>{1, 1}));
}

TEST(Labels, EventAfterCensorDateIsAnError) {
  CodeSets codes = {{"cvd", {"I21"}}};
  EXPECT_THROW(build_labels({{"a", "I21", d("2021-01-01")}}, {{"a", d("2015-01-01")}}, codes,
                            d("2020-01-01")),
               crisk::DataError);
}

TEST(Labels, OverlappingCodeSetsAreReported) {
  CodeSets codes = {{"cvd", {"I21"}}, {"ihd", {"I21"}}};
  try {
    build_labels({}, {}, codes, d("2020-01-01"));
    FAIL();
  } catch (const crisk::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("I21"), std::string::npos);
  }
}

TEST(Labels, DateParsing) {
  EXPECT_TRUE(parse_date("2016-02-29"));
  EXPECT_FALSE(parse_date("2015-02-29"));
  EXPECT_FALSE(parse_date("2015/01/01"));
  EXPECT_FALSE(parse_date("15-01-01"));
  EXPECT_EQ(format_date(d("2019-07-04")), "2019-07-04");
}

TEST(Labels, CodeSetOrderFollowsFile) {
  auto cs = parse_code_sets(R"({"t2d": ["E11"], "cvd": ["I21", "I63"]})");
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].first, "t2d");
  EXPECT_EQ(cs[1].second.size(), 2u);
  EXPECT_THROW(parse_code_sets(R"({"t2d": "E11"})"), crisk::ConfigError);
}

// --------------------------------------------------------------------------
// Synthetic generator and oracle
// --------------------------------------------------------------------------

TEST(Synthetic, SymmetricRisksSplitEvenly) {
  SynthSpec s;
  s.n = 10000;
  s.d = 3;
  s.shapes = {1.5, 1.5};
  s.scales = {2.0, 2.0};
  s.betas = {{0, 0, 0}, {0, 0, 0}};
  s.horizon = 1e12;
  s.seed = 3;
  auto c = generate_synthetic(s);
  auto counts = c.stratum_counts();
  const double frac = static_cast<double>(counts[1]) / static_cast<double>(counts[1] + counts[2]);
  EXPECT_NEAR(frac, 0.5, 0.03);
}

TEST(Synthetic, ZeroHorizonCensorsEverything) {
  auto s = two_risk_spec();
  s.n = 200;
  s.horizon = 0.0;
  auto c = generate_synthetic(s);
  for (auto& sub : c.subjects) {
    EXPECT_EQ(sub.event, 0);
    EXPECT_EQ(sub.time, 0.0);
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  auto s = two_risk_spec();
  s.n = 50;
  auto a = generate_synthetic(s);
  auto b = generate_synthetic(s);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.subjects[i].time, b.subjects[i].time);
    EXPECT_EQ(a.subjects[i].x, b.subjects[i].x);
  }
}

TEST(Oracle, ZeroAtTimeZero) {
  auto s = two_risk_spec();
  std::vector<double> x = {0.3, -1.0};
  EXPECT_EQ(oracle_cif(s, x, 0.0, 1), 0.0);
  EXPECT_THROW(oracle_cif(s, x, -1.0, 1), crisk::ConfigError);
}

TEST(Oracle, SingleRiskIsWeibullCdf) {
  SynthSpec s;
  s.d = 2;
  s.shapes = {0.7};
  s.scales = {3.0};
  s.betas = {{0.4, -0.8}};
  std::vector<double> x = {1.2, 0.5};
  const double k = 0.7;
  const double scale = 3.0 * std::exp(-(0.4 * 1.2 - 0.8 * 0.5) / k);
  for (double t : {0.01, 0.5, 1.0, 3.0, 10.0, 40.0}) {
    EXPECT_NEAR(oracle_cif(s, x, t, 1), 1.0 - std::exp(-std::pow(t / scale, k)), 1e-6) << t;
  }
}

TEST(Oracle, CommonShapeClosedForm) {
  // Equal shapes make the total hazard proportional: F_r = c_r/C (1 - exp(-C t^k)).
  SynthSpec s;
  s.d = 1;
  s.shapes = {1.3, 1.3, 1.3};
  s.scales = {2.0, 5.0, 3.0};
  s.betas = {{0.5}, {-0.2}, {1.0}};
  std::vector<double> x = {0.8};
  std::vector<double> c(3);
  double total = 0.0;
  for (int r = 0; r < 3; ++r) {
    c[static_cast<std::size_t>(r)] =
        std::pow(1.0 / s.scales[static_cast<std::size_t>(r)], 1.3) *
        std::exp(s.betas[static_cast<std::size_t>(r)][0] * 0.8);
    total += c[static_cast<std::size_t>(r)];
  }
  for (double t : {0.2, 1.0, 4.0}) {
    for (int r = 1; r <= 3; ++r) {
      const double expect = c[static_cast<std::size_t>(r - 1)] / total *
                            (1.0 - std::exp(-total * std::pow(t, 1.3)));
      EXPECT_NEAR(oracle_cif(s, x, t, r), expect, 1e-8);
    }
  }
}

TEST(Oracle, TotalIncidenceReachesOne) {
  auto s = two_risk_spec();
  for (std::vector<double> x : {std::vector<double>{0.0, 0.0}, {1.5, -2.0}, {-1.0, 1.0}}) {
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_NEAR(oracle_cif(s, x, inf, 1) + oracle_cif(s, x, inf, 2), 1.0, 1e-4);
  }
}

TEST(Oracle, MonteCarloAgreesWithQuadrature) {
  auto s = two_risk_spec();
  auto c = generate_synthetic(s);
  const double n = static_cast<double>(c.size());
  for (double t : {0.5, 1.5, 3.0, 5.0, 8.0}) {
    for (int r = 1; r <= 2; ++r) {
      double empirical = 0.0, oracle = 0.0;
      for (auto& sub : c.subjects) {
        if (sub.event == r && sub.time <= t) empirical += 1.0;
        oracle += oracle_cif(s, sub.x, t, r);
      }
      empirical /= n;
      oracle /= n;
      EXPECT_NEAR(empirical, oracle, 0.02) << "t=" << t << " r=" << r;
      EXPECT_LT(std::abs(empirical - oracle), 3.0 / std::sqrt(n));
    }
  }
}

TEST(Synthetic, SpecJsonRoundTrip) {
  auto s = two_risk_spec();
  auto back = synth_spec_from_json(to_json(s));
  std::vector<double> x = {0.1, 0.2};
  EXPECT_EQ(oracle_cif(back, x, 2.0, 1), oracle_cif(s, x, 2.0, 1));
  auto j = to_json(s);
  j["bogus"] = 1;
  EXPECT_THROW(synth_spec_from_json(j), crisk::ConfigError);
}

// --------------------------------------------------------------------------
// Splits
// --------------------------------------------------------------------------

TEST(Split, TenPerStratumFiveFolds) {
  auto c = strata_cohort({10, 10, 10});
  auto folds = stratified_kfold(c, 5, 1);
  for (auto& f : folds) {
    std::vector<int> per(3, 0);
    for (auto i : f) ++per[static_cast<std::size_t>(c.subjects[i].event)];
    EXPECT_EQ(per, (std::vector<int>{2, 2, 2}));
  }
}

TEST(Split, TableOneCountsT2dPerFold) {
  // censored, CVD, T2D, COPD, CKD
  auto c = strata_cohort({1139, 1536, 93, 106, 147});
  auto folds = stratified_kfold(c, 5, 2024);
  for (auto& f : folds) {
    std::size_t t2d = 0;
    for (auto i : f) t2d += c.subjects[i].event == 2;
    EXPECT_TRUE(t2d == 18 || t2d == 19) << t2d;
  }
}

TEST(Split, FoldsPartitionTheCohort) {
  auto c = strata_cohort({37, 21, 8});
  auto folds = stratified_kfold(c, 5, 9);
  std::set<std::size_t> all;
  std::size_t total = 0;
  for (auto& f : folds) {
    total += f.size();
    all.insert(f.begin(), f.end());
  }
  EXPECT_EQ(total, c.size());
  EXPECT_EQ(all.size(), c.size());
  for (std::size_t e = 0; e < 3; ++e) {
    std::vector<std::size_t> per;
    for (auto& f : folds) {
      std::size_t n = 0;
      for (auto i : f) n += static_cast<std::size_t>(c.subjects[i].event) == e;
      per.push_back(n);
    }
    EXPECT_LE(*std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()), 1u);
  }
  EXPECT_EQ(stratified_kfold(c, 5, 9), folds);
}

TEST(Split, SmallStratumNamed) {
  auto c = strata_cohort({10, 3});
  try {
    stratified_kfold(c, 5, 0);
    FAIL();
  } catch (const crisk::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("risk1"), std::string::npos);
  }
}

TEST(Split, HoldoutTenPercent) {
  auto c = strata_cohort({100});
  auto h = holdout_split(c, 0.10, 5);
  EXPECT_EQ(h.valid.size(), 10u);
  EXPECT_EQ(h.train.size(), 90u);
  auto h2 = holdout_split(c, 0.10, 5);
  EXPECT_EQ(h.valid, h2.valid);
}

TEST(Split, HoldoutStratified) {
  auto c = strata_cohort({57, 33, 14});
  auto h = holdout_split(c, 0.10, 8);
  EXPECT_EQ(h.valid.size(), 10u);  // round(10.4)
  std::vector<double> per(3, 0.0);
  for (auto i : h.valid) per[static_cast<std::size_t>(c.subjects[i].event)] += 1.0;
  EXPECT_LE(std::abs(per[0] - 5.7), 1.0);
  EXPECT_LE(std::abs(per[1] - 3.3), 1.0);
  EXPECT_LE(std::abs(per[2] - 1.4), 1.0);
  std::set<std::size_t> u(h.train.begin(), h.train.end());
  for (auto i : h.valid) EXPECT_FALSE(u.count(i));
}

// --------------------------------------------------------------------------
// CSV
// --------------------------------------------------------------------------

TEST(CohortCsv, RoundTripsExactly) {
  auto s = two_risk_spec();
  s.n = 20;
  auto c = generate_synthetic(s);
  auto path = std::filesystem::temp_directory_path() / "crisk_cohort_rt.csv";
  write_cohort_csv(path, c);
  auto back = read_cohort_csv(path);
  ASSERT_EQ(back.size(), c.size());
  EXPECT_EQ(back.feature_names, c.feature_names);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back.subjects[i].time, c.subjects[i].time);
    EXPECT_EQ(back.subjects[i].x, c.subjects[i].x);
    EXPECT_EQ(back.subjects[i].event, c.subjects[i].event);
  }
  std::filesystem::remove(path);
}

TEST(CohortCsv, MalformedRowNamesLine) {
  auto path = std::filesystem::temp_directory_path() / "crisk_bad.csv";
  {
    std::ofstream os(path);
    os << "id,time,event,x1\na,1.0,0,0.5\nb,oops,1,0.2\n";
  }
  try {
    read_cohort_csv(path);
    FAIL();
  } catch (const crisk::DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}
