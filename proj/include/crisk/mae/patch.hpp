#pragma once

#include <cmath>
#include <limits>
#include <numeric>

#include "crisk/grad/tensor.hpp"
#include "crisk/mae/volume.hpp"

namespace crisk::mae {

struct PatchSize {
  std::size_t x = 15;
  std::size_t y = 10;
  std::size_t z = 10;

  std::size_t voxels() const { return x * y * z; }
  bool operator==(const PatchSize&) const = default;
};

/// Patches of one volume. Patch p has 4D index (ix, iy, iz, c) and is
/// numbered ((ix * ny + iy) * nz + iz) * C + c; its voxels are flattened
/// row-major over (x, y, z). Voxels past the volume edge are zero padding.
struct PatchGrid {
  std::array<std::size_t, 4> dims{};
  PatchSize size;
  std::array<std::size_t, 3> counts{};
  grad::Tensor values;  ///< patches x voxels-per-patch
  std::vector<std::array<std::size_t, 4>> index;
  std::vector<bool> foreground;

  std::size_t patches() const { return index.size(); }
  std::size_t contrasts() const { return dims[3]; }

  /// 1 for voxels inside the original extent, 0 for padding.
  std::vector<double> valid_voxels(std::size_t p) const {
    std::vector<double> w(size.voxels(), 0.0);
    const auto& id = index[p];
    for (std::size_t a = 0; a < size.x; ++a)
      for (std::size_t b = 0; b < size.y; ++b)
        for (std::size_t c = 0; c < size.z; ++c) {
          const bool in = id[0] * size.x + a < dims[0] && id[1] * size.y + b < dims[1] && id[2] * size.z + c < dims[2];
          w[(a * size.y + b) * size.z + c] = in ? 1.0 : 0.0;
        }
    return w;
  }

  std::vector<std::size_t> foreground_ids() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < foreground.size(); ++p)
      if (foreground[p]) out.push_back(p);
    return out;
  }
};

namespace detail {

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

inline void check_patch(const std::array<std::size_t, 4>& dims, const PatchSize& ps) {
  if (ps.x == 0 || ps.y == 0 || ps.z == 0) throw ConfigError("patch dimensions must be positive");
  if (ps.x > dims[0] || ps.y > dims[1] || ps.z > dims[2]) {
    throw ConfigError("patch [" + std::to_string(ps.x) + "x" + std::to_string(ps.y) + "x" + std::to_string(ps.z) +
                      "] is larger than the volume [" + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                      "x" + std::to_string(dims[2]) + "]");
  }
}

}  // namespace detail

inline PatchGrid patchify(const Volume4D& v, const PatchSize& ps) {
  detail::check_patch(v.dims, ps);
  PatchGrid g;
  g.dims = v.dims;
  g.size = ps;
  g.counts = {detail::ceil_div(v.dims[0], ps.x), detail::ceil_div(v.dims[1], ps.y), detail::ceil_div(v.dims[2], ps.z)};
  const std::size_t C = v.dims[3];
  const std::size_t n = g.counts[0] * g.counts[1] * g.counts[2] * C;
  g.values = grad::Tensor({n, ps.voxels()});
  g.index.reserve(n);
  for (std::size_t ix = 0; ix < g.counts[0]; ++ix)
    for (std::size_t iy = 0; iy < g.counts[1]; ++iy)
      for (std::size_t iz = 0; iz < g.counts[2]; ++iz)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t p = g.index.size();
          g.index.push_back({ix, iy, iz, c});
          for (std::size_t a = 0; a < ps.x; ++a) {
            const std::size_t x = ix * ps.x + a;
            if (x >= v.dims[0]) break;
            for (std::size_t b = 0; b < ps.y; ++b) {
              const std::size_t y = iy * ps.y + b;
              if (y >= v.dims[1]) break;
              for (std::size_t d = 0; d < ps.z; ++d) {
                const std::size_t z = iz * ps.z + d;
                if (z >= v.dims[2]) break;
                g.values(p, (a * ps.y + b) * ps.z + d) = v(x, y, z, c);
              }
            }
          }
        }
  return g;
}

/// Inverse of patchify on the original extent; padding is dropped.
inline Volume4D unpatchify(const PatchGrid& g) {
  Volume4D v(g.dims);
  const auto& ps = g.size;
  for (std::size_t p = 0; p < g.patches(); ++p) {
    const auto& id = g.index[p];
    for (std::size_t a = 0; a < ps.x; ++a) {
      const std::size_t x = id[0] * ps.x + a;
      if (x >= g.dims[0]) break;
      for (std::size_t b = 0; b < ps.y; ++b) {
        const std::size_t y = id[1] * ps.y + b;
        if (y >= g.dims[1]) break;
        for (std::size_t d = 0; d < ps.z; ++d) {
          const std::size_t z = id[2] * ps.z + d;
          if (z >= g.dims[2]) break;
          v(x, y, z, id[3]) = static_cast<float>(g.values(p, (a * ps.y + b) * ps.z + d));
        }
      }
    }
  }
  return v;
}

/// A spatial block is foreground when at least `min_fraction` of its voxels
/// inside the volume have max-over-contrasts intensity above `threshold`.
/// Every contrast patch of that block shares the flag. Order follows
/// patchify.
inline std::vector<bool> foreground_flags(const Volume4D& v, const PatchSize& ps, double threshold = 0.05,
                                          double min_fraction = 0.10) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("foreground threshold must lie in [0,1]");
  if (!(min_fraction >= 0.0 && min_fraction <= 1.0)) throw ConfigError("foreground fraction must lie in [0,1]");
  detail::check_patch(v.dims, ps);
  const std::array<std::size_t, 3> counts{detail::ceil_div(v.dims[0], ps.x), detail::ceil_div(v.dims[1], ps.y),
                                          detail::ceil_div(v.dims[2], ps.z)};
  const std::size_t C = v.dims[3];
  std::vector<bool> flags;
  flags.reserve(counts[0] * counts[1] * counts[2] * C);
  for (std::size_t ix = 0; ix < counts[0]; ++ix)
    for (std::size_t iy = 0; iy < counts[1]; ++iy)
      for (std::size_t iz = 0; iz < counts[2]; ++iz) {
        std::size_t bright = 0, total = 0;
        for (std::size_t x = ix * ps.x; x < std::min(v.dims[0], (ix + 1) * ps.x); ++x)
          for (std::size_t y = iy * ps.y; y < std::min(v.dims[1], (iy + 1) * ps.y); ++y)
            for (std::size_t z = iz * ps.z; z < std::min(v.dims[2], (iz + 1) * ps.z); ++z) {
              float m = v(x, y, z, 0);
              for (std::size_t c = 1; c < C; ++c) m = std::max(m, v(x, y, z, c));
              bright += m > threshold ? 1 : 0;
              ++total;
            }
        const bool fg = static_cast<double>(bright) >= min_fraction * static_cast<double>(total) && bright > 0;
        for (std::size_t c = 0; c < C; ++c) flags.push_back(fg);
      }
  return flags;
}

/// Patchify plus foreground flags.
inline PatchGrid prepare(const Volume4D& v, const PatchSize& ps, double threshold = 0.05, double min_fraction = 0.10) {
  PatchGrid g = patchify(v, ps);
  g.foreground = foreground_flags(v, ps, threshold, min_fraction);
  return g;
}

struct MaskPlan {
  std::vector<std::size_t> visible;  ///< sorted patch ids
  std::vector<std::size_t> masked;   ///< sorted patch ids
  double ratio = 0.7;
  std::uint64_t seed = 0;
};

/// Masks round(ratio * F) of the F foreground patches, uniformly without
/// replacement.
inline MaskPlan sample_mask(const std::vector<bool>& flags, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in [0,1]");
  std::vector<std::size_t> fg;
  for (std::size_t p = 0; p < flags.size(); ++p)
    if (flags[p]) fg.push_back(p);
  if (fg.empty()) throw DataError("volume has no foreground patches");
  const auto m = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(fg.size())));
  std::mt19937_64 rng(seed);
  std::shuffle(fg.begin(), fg.end(), rng);
  MaskPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.masked.assign(fg.begin(), fg.begin() + static_cast<long>(m));
  plan.visible.assign(fg.begin() + static_cast<long>(m), fg.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over the voxels where `region` is non-zero (all voxels
/// when it is empty). Capped at 100 dB.
inline double psnr(const Volume4D& recon, const Volume4D& original, const std::vector<std::uint8_t>& region = {}) {
  if (recon.dims != original.dims) throw ShapeError("psnr: volume dimensions differ");
  if (!region.empty() && region.size() != recon.voxels()) throw ShapeError("psnr: region size mismatch");
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < recon.voxels(); ++i) {
    if (!region.empty() && !region[i]) continue;
    const double d = static_cast<double>(recon.data[i]) - static_cast<double>(original.data[i]);
    sq += d * d;
    ++n;
  }
  if (n == 0) throw DataError("psnr: empty region");
  const double mse = sq / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace crisk::mae
