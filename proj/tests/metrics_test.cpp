#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crisk/cohort.hpp"
#include "crisk/metrics.hpp"
#include "crisk/models.hpp"

using namespace crisk;
using namespace crisk::metrics;
using crisk::cohort::Cohort;
using crisk::cohort::Subject;

namespace {

Cohort make_cohort(const std::vector<std::pair<double, int>>& te, int risks = 2) {
  Cohort c;
  c.risk_names = cohort::default_risk_names(risks);
  c.feature_names = {"x1"};
  for (std::size_t i = 0; i < te.size(); ++i)
    c.subjects.push_back({"s" + std::to_string(i), {static_cast<double>(i)}, te[i].first, te[i].second});
  return c;
}

/// Score table where F_r(t_i | x_j) = v[j] regardless of t_i.
AnchorScores static_scores(const Cohort& c, int r, const std::vector<double>& v,
                           double horizon = std::numeric_limits<double>::quiet_NaN()) {
  return anchor_scores(c, r, [&](std::size_t, std::size_t j) { return v[j]; }, horizon);
}

}  // namespace

TEST(Ctd, PerfectOrderingIsOne) {
  auto c = make_cohort({{1, 1}, {2, 1}, {3, 0}, {4, 2}, {5, 1}, {6, 0}});
  auto s = anchor_scores(c, 1, [&](std::size_t, std::size_t j) { return -c.subjects[j].time; });
  auto r = ctd_index(c, s);
  EXPECT_EQ(r.ctd, 1.0);
  EXPECT_EQ(r.pairs, 5u + 4u + 1u);
}

TEST(Ctd, ConstantModelIsOneHalf) {
  auto c = make_cohort({{1, 1}, {2, 1}, {3, 0}, {4, 2}, {5, 1}, {6, 0}});
  auto r = ctd_index(c, static_scores(c, 1, std::vector<double>(6, 0.3)));
  EXPECT_EQ(r.ctd, 0.5);
}

TEST(Ctd, HandCohortMatchesEnumeration) {
  // Risk 1 anchors: s0 (t=1) against s1, s2, s3; s3 (t=4) has no later subject.
  // Scores at t=1: own 0.5 vs 0.2 (concordant), 0.5 (tie), 0.1 (concordant) -> 5/6.
  auto c = make_cohort({{1, 1}, {2, 0}, {3, 2}, {4, 1}});
  std::vector<double> at1 = {0.5, 0.2, 0.5, 0.1};
  auto s = anchor_scores(c, 1, [&](std::size_t, std::size_t j) { return at1[j]; });
  auto r = ctd_index(c, s);
  EXPECT_EQ(r.pairs, 3u);
  EXPECT_DOUBLE_EQ(r.ctd, 5.0 / 6.0);
  EXPECT_EQ(r.ctd, ctd_bruteforce(c, s).ctd);
  // Risk 2: s2 (t=3) against s3 only, wrong order.
  auto s2 = anchor_scores(c, 2, [&](std::size_t, std::size_t j) { return j == 2 ? 0.3 : 0.4; });
  EXPECT_EQ(ctd_index(c, s2).ctd, 0.0);
  EXPECT_EQ(ctd_index(c, s2).pairs, 1u);
}

TEST(Ctd, SinglePairEitherOrder) {
  auto c = make_cohort({{1, 1}, {2, 0}});
  EXPECT_EQ(ctd_bruteforce(c, static_scores(c, 1, {0.9, 0.1})).ctd, 1.0);
  EXPECT_EQ(ctd_bruteforce(c, static_scores(c, 1, {0.1, 0.9})).ctd, 0.0);
  EXPECT_EQ(ctd_index(c, static_scores(c, 1, {0.9, 0.1})).ctd, 1.0);
  EXPECT_EQ(ctd_index(c, static_scores(c, 1, {0.1, 0.9})).ctd, 0.0);
}

TEST(Ctd, TieToleranceIsAbsolute) {
  auto c = make_cohort({{1, 1}, {2, 0}, {3, 0}});
  auto r = ctd_index(c, static_scores(c, 1, {0.5, 0.5 - 0.9e-12, 0.5 - 1.1e-12}));
  EXPECT_EQ(r.half_units, 1u + 2u);
}

TEST(Ctd, EqualTimesAreNotComparable) {
  auto c = make_cohort({{1, 1}, {1, 0}, {1, 2}});
  EXPECT_THROW(ctd_index(c, static_scores(c, 1, {1, 0, 0})), DataError);
}

TEST(Ctd, NoComparablePairsNamesTheRisk) {
  auto c = make_cohort({{1, 0}, {2, 1}});
  c.risk_names = {"cvd", "t2d"};
  try {
    ctd_index(c, static_scores(c, 2, {0, 0}));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("t2d"), std::string::npos);
  }
}

TEST(Ctd, HorizonDropsLateAnchors) {
  auto c = make_cohort({{1, 1}, {2, 1}, {3, 1}, {4, 0}});
  auto all = ctd_index(c, static_scores(c, 1, {4, 3, 1, 2}));
  auto early = ctd_index(c, static_scores(c, 1, {4, 3, 1, 2}, 2.0));
  EXPECT_EQ(all.pairs, 6u);
  EXPECT_EQ(early.pairs, 5u);
  EXPECT_EQ(early.ctd, 1.0);
  EXPECT_EQ(early.horizon, 2.0);
  EXPECT_EQ(all.horizon, 4.0);
}

TEST(Ctd, IndexEqualsBruteForceOnRandomCohorts) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<std::pair<double, int>> te;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse times and scores force time ties and score ties.
      te.emplace_back(static_cast<double>(rng() % 12), static_cast<int>(rng() % 3));
    }
    te[0].second = 1;
    te[0].first = 0;
    te[1].first = 5;
    auto c = make_cohort(te);
    std::vector<double> table(n * n);
    for (auto& v : table) v = static_cast<double>(rng() % 7) / 7.0;
    auto s = anchor_scores(c, 1, [&](std::size_t i, std::size_t j) { return table[i * n + j]; });
    const double h = (trial % 3 == 0) ? 6.0 : std::numeric_limits<double>::quiet_NaN();
    if (trial % 3 == 0) s = anchor_scores(c, 1, [&](std::size_t i, std::size_t j) { return table[i * n + j]; }, h);
    auto a = ctd_index(c, s);
    auto b = ctd_bruteforce(c, s);
    auto w = ctd_index(c, s, 3);
    ASSERT_EQ(a.pairs, b.pairs) << trial;
    ASSERT_EQ(a.half_units, b.half_units) << trial;
    ASSERT_EQ(a.ctd, b.ctd) << trial;
    ASSERT_EQ(w.ctd, a.ctd) << trial;
    ASSERT_GE(a.ctd, 0.0);
    ASSERT_LE(a.ctd, 1.0);
  }
}

TEST(Ctd, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, int>> te;
  for (int i = 0; i < 200; ++i) te.emplace_back(u(rng) * 10, static_cast<int>(rng() % 3));
  auto c = make_cohort(te);
  std::vector<double> table(200 * 200);
  for (auto& v : table) v = u(rng);
  auto base = ctd_index(c, anchor_scores(c, 1, [&](std::size_t i, std::size_t j) { return table[i * 200 + j]; }));
  for (auto f : std::vector<double (*)(double)>{[](double s) { return std::exp(3 * s); },
                                                [](double s) { return s * s * s + 2 * s; },
                                                [](double s) { return 10 * s - 4; }}) {
    auto t = ctd_index(c, anchor_scores(c, 1, [&](std::size_t i, std::size_t j) { return f(table[i * 200 + j]); }));
    EXPECT_EQ(t.half_units, base.half_units);
  }
}

TEST(Ctd, RandomScoresGiveOneHalf) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, int>> te;
  for (int i = 0; i < 2000; ++i) te.emplace_back(u(rng) * 10, static_cast<int>(rng() % 3));
  auto c = make_cohort(te);
  auto s = anchor_scores(c, 1, [&](std::size_t, std::size_t) { return u(rng); });
  auto r = ctd_index(c, s);
  // Pairs sharing an anchor share its own score, so the spread is governed by
  // sum_i (m_i^2 / 12 + m_i / 6) over anchors with m_i pairs, not by 1/pairs.
  double var = 0.0;
  for (auto i : s.anchors) {
    double m = 0.0;
    for (auto& sj : c.subjects) m += sj.time > c.subjects[i].time ? 1.0 : 0.0;
    var += m * m / 12.0 + m / 6.0;
  }
  const double pairs = static_cast<double>(r.pairs);
  EXPECT_NEAR(r.ctd, 0.5, 3.0 * std::sqrt(var) / pairs);
}

TEST(Ctd, IndependentPairOutcomesGiveOneHalfWithinPairBound) {
  // One comparable pair per anchor: pair outcomes are independent and the
  // 3 / sqrt(pairs) band applies directly.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Cohort c;
  c.risk_names = cohort::default_risk_names(1);
  c.feature_names = {"x1"};
  for (int i = 0; i < 4000; ++i) c.subjects.push_back({"s" + std::to_string(i), {0.0}, 1.0 + i % 2, i % 2 == 0 ? 1 : 0});
  // Disjoint two-subject cohorts: anchor at t=1, comparator at t=2.
  std::vector<double> table(c.size());
  for (auto& v : table) v = u(rng);
  std::size_t units = 0, pairs = 0;
  for (std::size_t k = 0; k + 1 < c.size(); k += 2) {
    Cohort pair;
    pair.risk_names = c.risk_names;
    pair.feature_names = c.feature_names;
    pair.subjects = {c.subjects[k], c.subjects[k + 1]};
    auto r = ctd_index(pair, static_scores(pair, 1, {table[k], table[k + 1]}));
    units += r.half_units;
    pairs += r.pairs;
  }
  const double ctd = static_cast<double>(units) / (2.0 * static_cast<double>(pairs));
  EXPECT_NEAR(ctd, 0.5, 3.0 / std::sqrt(static_cast<double>(pairs)));
}

TEST(Ctd, JsonRecord) {
  auto c = make_cohort({{1, 1}, {2, 0}});
  auto j = to_json(ctd_index(c, static_scores(c, 1, {0.9, 0.1})), "cvd");
  EXPECT_EQ(j["risk"], "cvd");
  EXPECT_EQ(j["ctd"], 1.0);
  EXPECT_EQ(j["pairs"], 1);
  EXPECT_EQ(j["horizon"], 2.0);
}

TEST(Ctd, ModelScoresMatchPointwiseCallback) {
  cohort::SynthSpec spec;
  spec.n = 60;
  spec.d = 2;
  spec.shapes = {1.2, 0.8};
  spec.scales = {2.0, 3.0};
  spec.betas = {{1.0, 0.0}, {0.0, 1.0}};
  spec.horizon = 5.0;
  spec.seed = 3;
  auto c = cohort::generate_synthetic(spec);
  models::ModelConfig cfg;
  cfg.kind = models::ModelKind::Nfg;
  cfg.nodes = 8;
  auto m = models::make_model(cfg);
  models::train_model(*m, c, nullptr, 1, 3);
  for (int r = 1; r <= 2; ++r) {
    auto fast = model_ctd(*m, c, r);
    auto slow = ctd_bruteforce(c, anchor_scores(c, r, [&](std::size_t i, std::size_t j) {
      return m->cif(c.subjects[j].x, c.subjects[i].time, r);
    }));
    EXPECT_EQ(fast.half_units, slow.half_units);
    EXPECT_EQ(fast.pairs, slow.pairs);
  }
}

TEST(Ctd, OraclePathMatchesPointwiseOracle) {
  cohort::SynthSpec spec;
  spec.n = 10;
  spec.d = 2;
  spec.shapes = {0.7, 2.5};
  spec.scales = {2.0, 3.0};
  spec.betas = {{0.5, -0.3}, {0.2, 0.9}};
  spec.horizon = 5.0;
  const std::vector<double> x = {0.4, -1.1};
  const std::vector<double> times = {0.01, 0.3, 0.3, 1.0, 2.2, 4.9, 11.0};
  for (int r = 1; r <= 2; ++r) {
    auto path = cohort::oracle_cif_path(spec, x, times, r);
    for (std::size_t k = 0; k < times.size(); ++k) EXPECT_NEAR(path[k], cohort::oracle_cif(spec, x, times[k], r), 1e-9);
  }
}
