#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "crisk/error.hpp"
#include "crisk/grad/checkpoint.hpp"

namespace crisk::mae {

/// (X, Y, Z, C) float volume, row-major with the contrast index fastest.
struct Volume4D {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};
  std::vector<float> data;

  Volume4D() = default;
  explicit Volume4D(std::array<std::size_t, 4> d, float fill = 0.0f) : dims(d), data(voxels(), fill) {
    for (auto n : dims)
      if (n == 0) throw ShapeError("volume dimensions must be positive");
  }

  std::size_t voxels() const { return dims[0] * dims[1] * dims[2] * dims[3]; }
  std::size_t contrasts() const { return dims[3]; }
  std::size_t offset(std::size_t x, std::size_t y, std::size_t z, std::size_t c) const {
    return ((x * dims[1] + y) * dims[2] + z) * dims[3] + c;
  }
  float& operator()(std::size_t x, std::size_t y, std::size_t z, std::size_t c) { return data[offset(x, y, z, c)]; }
  float operator()(std::size_t x, std::size_t y, std::size_t z, std::size_t c) const {
    return data[offset(x, y, z, c)];
  }
  bool operator==(const Volume4D&) const = default;
};

/// Maps values to [0,1] by min-max scaling; constant volumes become zero.
/// Volumes already inside [0,1] are left untouched.
inline void normalize_intensities(Volume4D& v) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float x : v.data) {
    if (!std::isfinite(x)) throw DataError("volume contains non-finite voxels");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (lo >= 0.0f && hi <= 1.0f) return;
  const float span = hi - lo;
  for (float& x : v.data) x = span > 0.0f ? (x - lo) / span : 0.0f;
}

// Volume file layout (little-endian):
//   "RBVL" | u32 version | u32 rank | u32 dims[rank] | f32 voxels, row-major
inline constexpr char kVolumeMagic[4] = {'R', 'B', 'V', 'L'};
inline constexpr std::uint32_t kVolumeVersion = 1;

inline void write_volume(const std::filesystem::path& path, const Volume4D& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kVolumeMagic, 4);
  grad::io::put_u32(os, kVolumeVersion);
  grad::io::put_u32(os, 4);
  for (auto d : v.dims) grad::io::put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!os) throw DataError("failed writing " + path.string());
}

/// Accepts rank 3 (one contrast) or rank 4. Intensities are normalized to
/// [0,1] on ingestion.
inline Volume4D read_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kVolumeMagic)) {
    throw DataError(path.string() + " is not an RBVL volume");
  }
  const auto version = grad::io::get_u32(is, "volume version");
  if (version != kVolumeVersion) throw DataError("unsupported volume version " + std::to_string(version));
  const auto rank = grad::io::get_u32(is, "volume rank");
  if (rank != 3 && rank != 4) throw DataError("volume rank must be 3 or 4, got " + std::to_string(rank));
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  for (std::uint32_t i = 0; i < rank; ++i) dims[i] = grad::io::get_u32(is, "volume dims");
  for (auto d : dims)
    if (d == 0) throw DataError("volume has a zero dimension");
  Volume4D v(dims);
  if (!is.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(float)))) {
    throw DataError("truncated voxel payload in " + path.string());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
  normalize_intensities(v);
  return v;
}

/// `*.rbvl` files of a directory in name order.
inline std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> out;
  for (auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rbvl") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Phantoms
// ---------------------------------------------------------------------------

/// Body ellipsoid with one inner organ ellipsoid. Radii and centres are
/// fractions of the volume extent. Contrast 0 ("water") is bright in the
/// organ, contrast 1 ("fat") is bright in the body shell and dark in the
/// organ.
struct PhantomSpec {
  std::array<double, 3> centre{0.5, 0.5, 0.5};
  std::array<double, 3> radius{0.38, 0.38, 0.38};
  std::array<double, 3> organ_centre{0.5, 0.5, 0.5};
  std::array<double, 3> organ_radius{0.15, 0.15, 0.15};
  double body_water = 0.45;
  double organ_water = 0.85;
  double body_fat = 0.7;
  double organ_fat = 0.15;
  double noise = 0.02;
  std::uint64_t seed = 0;
};

inline std::array<std::size_t, 4> default_phantom_dims() { return {60, 40, 40, 2}; }

inline Volume4D make_phantom(const PhantomSpec& s, std::array<std::size_t, 4> dims = default_phantom_dims()) {
  Volume4D v(dims);
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> noise(0.0, s.noise);
  auto inside = [&](const std::array<double, 3>& c, const std::array<double, 3>& r, std::size_t x, std::size_t y,
                    std::size_t z) {
    const std::array<double, 3> p{(static_cast<double>(x) + 0.5) / static_cast<double>(dims[0]),
                                  (static_cast<double>(y) + 0.5) / static_cast<double>(dims[1]),
                                  (static_cast<double>(z) + 0.5) / static_cast<double>(dims[2])};
    double q = 0.0;
    for (int a = 0; a < 3; ++a) q += (p[a] - c[a]) * (p[a] - c[a]) / (r[a] * r[a]);
    return q;
  };
  for (std::size_t x = 0; x < dims[0]; ++x)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t z = 0; z < dims[2]; ++z) {
        const double body = inside(s.centre, s.radius, x, y, z);
        const double organ = inside(s.organ_centre, s.organ_radius, x, y, z);
        for (std::size_t c = 0; c < dims[3]; ++c) {
          double val = 0.0;
          if (body <= 1.0) {
            const bool fat = c % 2 == 1;
            if (organ <= 1.0) {
              val = fat ? s.organ_fat : s.organ_water;
            } else {
              // Fat is brightest towards the body surface.
              val = fat ? s.body_fat * (0.5 + 0.5 * body) : s.body_water;
            }
            val += noise(rng);
          } else {
            val = std::abs(noise(rng)) * 0.25;
          }
          v(x, y, z, c) = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
  return v;
}

inline PhantomSpec random_phantom_spec(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PhantomSpec s;
  for (int a = 0; a < 3; ++a) {
    s.radius[a] = 0.30 + 0.12 * u(rng);
    s.centre[a] = 0.5 + (u(rng) - 0.5) * 0.1;
    s.organ_radius[a] = s.radius[a] * (0.3 + 0.2 * u(rng));
    s.organ_centre[a] = s.centre[a] + (u(rng) - 0.5) * (s.radius[a] - s.organ_radius[a]);
  }
  s.body_water = 0.35 + 0.2 * u(rng);
  s.organ_water = 0.75 + 0.2 * u(rng);
  s.body_fat = 0.6 + 0.3 * u(rng);
  s.organ_fat = 0.05 + 0.15 * u(rng);
  s.seed = rng();
  return s;
}

inline std::vector<Volume4D> make_phantoms(std::size_t n, std::array<std::size_t, 4> dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Volume4D> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_phantom(random_phantom_spec(rng), dims));
  return out;
}

}  // namespace crisk::mae
