#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "crisk/grad/gradcheck.hpp"
#include "crisk/mae.hpp"

using namespace crisk;
using namespace crisk::mae;

namespace {

Volume4D ramp(std::array<std::size_t, 4> dims) {
  Volume4D v(dims);
  for (std::size_t i = 0; i < v.voxels(); ++i) v.data[i] = static_cast<float>((i * 7919) % 1000) / 999.0f;
  return v;
}

MaeConfig toy_config() {
  MaeConfig c;
  c.patch = {3, 2, 2};
  c.dim = 8;
  c.heads = 2;
  c.decoder_dim = 8;
  c.decoder_heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  return c;
}

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

TEST(Patch, CountsAndRoundTrip) {
  auto v = ramp({30, 20, 20, 2});
  auto g = patchify(v, {15, 10, 10});
  EXPECT_EQ(g.patches(), 16u);
  EXPECT_EQ(unpatchify(g), v);
  std::set<std::array<std::size_t, 4>> pos(g.index.begin(), g.index.end());
  EXPECT_EQ(pos.size(), g.patches());
}

TEST(Patch, PaddingAtEdges) {
  auto v = ramp({31, 20, 20, 2});
  auto g = patchify(v, {15, 10, 10});
  EXPECT_EQ(g.counts[0], 3u);
  EXPECT_EQ(g.patches(), 24u);
  EXPECT_EQ(unpatchify(g), v);
  // The last x-block holds one real slab and zero padding.
  const auto last = g.patches() - 1;
  auto w = g.valid_voxels(last);
  EXPECT_EQ(std::accumulate(w.begin(), w.end(), 0.0), 1.0 * 10 * 10);
  for (std::size_t k = 0; k < w.size(); ++k)
    if (w[k] == 0.0) {
      EXPECT_EQ(g.values(last, k), 0.0);
    }
}

TEST(Patch, PatchLargerThanVolumeFails) {
  Volume4D v({10, 10, 10, 1});
  EXPECT_THROW(patchify(v, {15, 10, 10}), ConfigError);
  EXPECT_THROW(patchify(v, {0, 10, 10}), ConfigError);
}

TEST(Foreground, AllZeroAndAllOne) {
  Volume4D zero({30, 20, 20, 2}, 0.0f), one({30, 20, 20, 2}, 1.0f);
  auto fz = foreground_flags(zero, {15, 10, 10});
  auto fo = foreground_flags(one, {15, 10, 10});
  EXPECT_EQ(std::count(fz.begin(), fz.end(), true), 0);
  EXPECT_EQ(std::count(fo.begin(), fo.end(), true), 16);
}

TEST(Foreground, PhantomMatchesVoxelCount) {
  PhantomSpec s;
  auto v = make_phantom(s, {45, 40, 40, 2});
  const PatchSize ps{15, 10, 10};
  auto flags = foreground_flags(v, ps, 0.05, 0.10);
  // Independent count: one pass over voxels, binned by integer division.
  const std::size_t nx = 3, ny = 4, nz = 4;
  std::vector<std::size_t> bright(nx * ny * nz, 0), total(nx * ny * nz, 0);
  for (std::size_t i = 0; i < v.voxels(); i += 2) {
    const std::size_t z = (i / 2) % 40, y = (i / 80) % 40, x = i / 3200;
    const std::size_t b = (x / 15 * ny + y / 10) * nz + z / 10;
    ++total[b];
    if (std::max(v.data[i], v.data[i + 1]) > 0.05f) ++bright[b];
  }
  std::size_t fg = 0;
  for (std::size_t b = 0; b < bright.size(); ++b) {
    const bool expect = bright[b] * 10 >= total[b] && bright[b] > 0;
    EXPECT_EQ(flags[2 * b], expect) << b;
    EXPECT_EQ(flags[2 * b + 1], expect) << b;
    fg += expect;
  }
  EXPECT_GT(fg, 0u);
  EXPECT_LT(fg, bright.size());
}

TEST(Mask, ExactCounts) {
  std::vector<bool> flags(20, false);
  for (std::size_t i = 0; i < 10; ++i) flags[2 * i] = true;
  EXPECT_EQ(sample_mask(flags, 0.7, 1).masked.size(), 7u);
  for (std::size_t f : {1u, 3u, 10u, 17u, 50u}) {
    std::vector<bool> fl(f, true);
    for (double r : {0.0, 0.3, 0.7, 1.0}) {
      auto p = sample_mask(fl, r, 9);
      EXPECT_EQ(p.masked.size(), static_cast<std::size_t>(std::llround(r * f)));
      EXPECT_EQ(p.masked.size() + p.visible.size(), f);
    }
  }
  auto p = sample_mask(flags, 0.7, 1);
  std::set<std::size_t> all(p.masked.begin(), p.masked.end());
  all.insert(p.visible.begin(), p.visible.end());
  EXPECT_EQ(all.size(), 10u);
  for (auto id : all) EXPECT_TRUE(flags[id]);
}

TEST(Mask, DeterministicAndUniform) {
  std::vector<bool> flags(40, true);
  for (std::size_t i = 0; i < 40; i += 3) flags[i] = false;
  auto a = sample_mask(flags, 0.7, 5), b = sample_mask(flags, 0.7, 5);
  EXPECT_EQ(a.masked, b.masked);
  std::vector<int> hits(flags.size(), 0);
  for (std::uint64_t s = 0; s < 1000; ++s)
    for (auto id : sample_mask(flags, 0.7, s).masked) ++hits[id];
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) {
      EXPECT_EQ(hits[i], 0);
    } else {
      EXPECT_NEAR(hits[i] / 1000.0, 0.7, 0.05) << i;
    }
  }
  EXPECT_THROW(sample_mask(std::vector<bool>(5, false), 0.7, 1), DataError);
  EXPECT_THROW(sample_mask(flags, 1.5, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

TEST(Psnr, ClosedForms) {
  Volume4D a({4, 4, 4, 2}, 0.3f), b({4, 4, 4, 2}, 0.4f);
  EXPECT_EQ(psnr(a, a), 100.0);
  EXPECT_NEAR(psnr(b, a), 20.0, 1e-5);
  Volume4D c({10, 1, 1, 1}, 0.0f), d({10, 1, 1, 1}, 0.0f);
  d.data[0] = static_cast<float>(std::sqrt(0.1));  // MSE = 0.01
  EXPECT_NEAR(psnr(d, c), 20.0, 1e-5);
  std::vector<std::uint8_t> region(10, 0);
  region[1] = 1;
  EXPECT_EQ(psnr(d, c, region), 100.0);
  EXPECT_THROW(psnr(a, c), ShapeError);
}

// ---------------------------------------------------------------------------
// Phantoms and files
// ---------------------------------------------------------------------------

TEST(Phantom, RangeForegroundAndDeterminism) {
  EXPECT_TRUE(make_phantoms(0, default_phantom_dims(), 1).empty());
  auto vs = make_phantoms(10, default_phantom_dims(), 4);
  auto again = make_phantoms(10, default_phantom_dims(), 4);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    EXPECT_EQ(vs[i], again[i]);
    std::size_t fg = 0;
    const auto& v = vs[i];
    for (std::size_t k = 0; k < v.voxels(); k += 2) {
      ASSERT_GE(v.data[k], 0.0f);
      ASSERT_LE(v.data[k], 1.0f);
      fg += std::max(v.data[k], v.data[k + 1]) > 0.05f;
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(v.voxels() / 2);
    EXPECT_GT(frac, 0.05);
    EXPECT_LT(frac, 0.60);
  }
  EXPECT_NE(vs[0], vs[1]);
}

TEST(VolumeFile, RoundTripAndErrors) {
  auto v = make_phantoms(1, {20, 10, 10, 2}, 3)[0];
  auto p = temp_file("crisk_vol.rbvl");
  write_volume(p, v);
  EXPECT_EQ(read_volume(p), v);

  {
    std::ofstream os(p, std::ios::binary);
    os << "NOPE";
  }
  EXPECT_THROW(read_volume(p), DataError);

  {
    std::ofstream os(p, std::ios::binary);
    os.write("RBVL", 4);
    grad::io::put_u32(os, 1);
    grad::io::put_u32(os, 3);
    for (std::uint32_t d : {2u, 1u, 1u}) grad::io::put_u32(os, d);
    const float vals[2] = {-2.0f, 6.0f};
    os.write(reinterpret_cast<const char*>(vals), sizeof vals);
  }
  auto r = read_volume(p);
  EXPECT_EQ(r.dims, (std::array<std::size_t, 4>{2, 1, 1, 1}));
  EXPECT_EQ(r.data, (std::vector<float>{0.0f, 1.0f}));
  std::filesystem::remove(p);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

TEST(MaeConfigJson, RoundTripAndRejection) {
  MaeConfig c;
  c.dim = 1025;
  c.heads = 5;
  auto back = mae_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(mae_config_from_json({{"dims", 3}}), ConfigError);
  EXPECT_THROW(mae_config_from_json({{"dim", 10}, {"heads", 4}}), ConfigError);
}

TEST(MaeModel, PositionTableSplitsChannels) {
  auto g = patchify(ramp({30, 20, 20, 2}), {15, 10, 10});
  std::vector<std::size_t> ids(g.patches());
  std::iota(ids.begin(), ids.end(), 0);
  auto t = position_table(g, ids, 1025);
  EXPECT_EQ(t.cols(), 1025u);
  std::set<std::vector<double>> rows;
  for (std::size_t r = 0; r < t.rows(); ++r)
    rows.insert(std::vector<double>(t.data().begin() + r * 1025, t.data().begin() + (r + 1) * 1025));
  EXPECT_EQ(rows.size(), g.patches());
  // Contrast group starts at column 768 with sin(c) then cos(c).
  EXPECT_NEAR(t(1, 768), std::sin(1.0), 1e-15);
  EXPECT_NEAR(t(1, 769), std::cos(1.0), 1e-15);
}

TEST(MaeModel, NoMaskedPatchesGivesZeroLoss) {
  MaeModel m(toy_config(), 1);
  auto g = m.prepare(make_phantoms(1, {6, 4, 4, 2}, 2)[0]);
  g.foreground.assign(g.patches(), true);
  auto out = m.forward(g, sample_mask(g.foreground, 0.0, 1));
  EXPECT_EQ(out.loss.item(), 0.0);
  EXPECT_TRUE(out.warning.has_value());
}

TEST(MaeModel, EncoderIsBlindToMaskedPatches) {
  MaeModel m(MaeConfig{}, 3);
  auto v = make_phantoms(1, default_phantom_dims(), 5)[0];
  auto g = m.prepare(v);
  auto plan = sample_mask(g.foreground, 0.7, 11);
  ASSERT_FALSE(plan.masked.empty());
  auto clean = m.encode(g, plan.visible).value();
  auto poisoned = g;
  for (auto p : plan.masked)
    for (std::size_t k = 0; k < poisoned.values.cols(); ++k) poisoned.values(p, k) = 1e6;
  // Background patches are never encoded either.
  for (std::size_t p = 0; p < g.patches(); ++p)
    if (!g.foreground[p])
      for (std::size_t k = 0; k < poisoned.values.cols(); ++k) poisoned.values(p, k) = -1e6;
  auto dirty = m.encode(poisoned, plan.visible).value();
  EXPECT_EQ(vec(clean.data()), vec(dirty.data()));
  // The decoder target does see them.
  EXPECT_NE(m.forward(g, plan).loss.item(), m.forward(poisoned, plan).loss.item());
}

TEST(MaeModel, UntrainedLossNearMaskedVariance) {
  MaeModel m(MaeConfig{}, 4);
  auto vols = make_phantoms(5, default_phantom_dims(), 6);
  for (std::size_t i = 0; i < vols.size(); ++i) {
    auto g = m.prepare(vols[i]);
    auto plan = sample_mask(g.foreground, 0.7, i);
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (auto p : plan.masked) {
      auto w = g.valid_voxels(p);
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        s += g.values(p, k);
        s2 += g.values(p, k) * g.values(p, k);
        n += 1.0;
      }
    }
    const double var = s2 / n - (s / n) * (s / n);
    const double loss = m.forward(g, plan).loss.item();
    EXPECT_GT(loss, var / 3.0);
    EXPECT_LT(loss, var * 3.0);
  }
}

TEST(MaeModel, LossGradientMatchesFiniteDifferences) {
  MaeModel m(toy_config(), 5);
  auto g = m.prepare(ramp({6, 4, 4, 2}));
  ASSERT_EQ(g.patches(), 16u);
  g.foreground.assign(16, true);
  auto plan = sample_mask(g.foreground, 0.7, 3);
  auto rep = grad::grad_check(m.params(), [&] { return m.forward(g, plan).loss; });
  EXPECT_TRUE(rep.passed) << rep.worst_param << " err=" << rep.worst_error;
}

TEST(MaeTraining, HalvesMaskedLossIn200Steps) {
  MaeConfig cfg;
  cfg.steps = 200;
  MaeModel m(cfg, 7);
  auto grids = prepare_all(m, make_phantoms(50, default_phantom_dims(), 1));
  const double before = evaluate_mae(m, grids, 99);
  auto h = train_mae(m, grids, 3);
  const double after = evaluate_mae(m, grids, 99);
  EXPECT_EQ(h.step_loss.size(), 200u);
  EXPECT_EQ(h.epoch_loss.size(), 4u);
  EXPECT_LE(after, 0.5 * before) << before << " -> " << after;
}

TEST(MaeTraining, SameSeedSameHistory) {
  MaeConfig cfg = toy_config();
  cfg.steps = 15;
  cfg.volumes_per_step = 2;
  auto vols = make_phantoms(4, {12, 8, 8, 2}, 2);
  MaeModel a(cfg, 1), b(cfg, 1);
  auto ha = train_mae(a, prepare_all(a, vols), 9);
  auto hb = train_mae(b, prepare_all(b, vols), 9);
  EXPECT_EQ(ha.step_loss, hb.step_loss);
  EXPECT_EQ(ha.epoch_loss, hb.epoch_loss);
  EXPECT_THROW(train_mae(a, {}, 1), DataError);
}

TEST(MaeTraining, NonFiniteLossKeepsLastGoodWeights) {
  MaeModel m(toy_config(), 2);
  auto grids = prepare_all(m, make_phantoms(2, {12, 8, 8, 2}, 3));
  for (auto& g : grids) g.values.fill(std::numeric_limits<double>::quiet_NaN());
  const auto before = m.params().snapshot();
  auto ckpt = temp_file("crisk_mae_last_good.ckpt");
  std::filesystem::remove(ckpt);
  EXPECT_THROW(train_mae(m, grids, 1, ckpt), NumericError);
  auto after = m.params().snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(vec(before[i].data()), vec(after[i].data()));
  EXPECT_TRUE(std::filesystem::exists(ckpt));
  std::filesystem::remove(ckpt);
  auto side = ckpt;
  side += ".json";
  std::filesystem::remove(side);
}

TEST(Embedding, LengthDeterminismAndSensitivity) {
  MaeModel m(MaeConfig{}, 8);
  PhantomSpec small, large;
  large.radius = {0.45, 0.45, 0.45};
  small.radius = {0.30, 0.30, 0.30};
  auto vs = make_phantom(small), vl = make_phantom(large);
  auto es = m.embedding(vs), es2 = m.embedding(vs), el = m.embedding(vl);
  EXPECT_EQ(es.size(), 64u);
  EXPECT_EQ(es, es2);
  double dot = 0, ns = 0, nl = 0;
  for (std::size_t i = 0; i < es.size(); ++i) {
    dot += es[i] * el[i];
    ns += es[i] * es[i];
    nl += el[i] * el[i];
  }
  EXPECT_LT(dot / std::sqrt(ns * nl), 1.0 - 1e-6);
  EXPECT_THROW(m.embedding(Volume4D(default_phantom_dims(), 0.0f)), DataError);
}

TEST(Embedding, CheckpointRoundTrip) {
  MaeConfig cfg = toy_config();
  cfg.steps = 5;
  MaeModel m(cfg, 3);
  auto vols = make_phantoms(2, {12, 8, 8, 2}, 4);
  train_mae(m, prepare_all(m, vols), 2);
  auto p = temp_file("crisk_mae.ckpt");
  save_mae(m, p);
  auto back = load_mae(p);
  EXPECT_EQ(back->embedding(vols[0]), m.embedding(vols[0]));
  std::filesystem::remove(p);
  auto side = p;
  side += ".json";
  std::filesystem::remove(side);
  EXPECT_THROW(load_mae(p), DataError);
}

TEST(Reconstruct, VisibleRegionUntouched) {
  MaeModel m(MaeConfig{}, 9);
  auto v = make_phantoms(1, default_phantom_dims(), 7)[0];
  auto g = m.prepare(v);
  auto plan = sample_mask(g.foreground, 0.7, 2);
  auto [rec, region] = m.reconstruct(v, plan);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < v.voxels(); ++i) {
    if (region[i]) {
      ++inside;
    } else {
      ASSERT_EQ(rec.data[i], v.data[i]);
    }
  }
  EXPECT_EQ(inside, plan.masked.size() * 15 * 10 * 10);
  const double db = psnr(rec, v, region);
  EXPECT_GT(db, 0.0);
  EXPECT_LT(db, 100.0);
}
