#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "crisk/grad/layers.hpp"

namespace crisk::grad {

// Parameter checkpoint layout (all integers little-endian):
//   "RBCK" | u32 version
//   repeated: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f64 payload

inline constexpr char kCheckpointMagic[4] = {'R', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated " + what);
  return v;
}

}  // namespace io

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void write_checkpoint(std::ostream& os, const NamedTensors& tensors) {
  os.write(kCheckpointMagic, 4);
  io::put_u32(os, kCheckpointVersion);
  for (auto& [name, t] : tensors) {
    io::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

inline NamedTensors read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("not a parameter checkpoint (bad magic)");
  }
  const auto version = io::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  NamedTensors out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = io::get_u32(is, "record name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated record name");
    const auto rank = io::get_u32(is, "record rank");
    Shape shape(rank);
    for (auto& d : shape) d = io::get_u32(is, "record dims");
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw DataError("truncated payload for " + name);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline NamedTensors named_tensors(const ParamGraph& g) {
  NamedTensors out;
  for (auto& [name, v] : g.entries()) out.emplace_back(name, v.value());
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamGraph& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, named_tensors(g));
  if (!os) throw DataError("write failed: " + path.string());
}

/// Loads values into an already-constructed graph; names and shapes must match.
inline void load_checkpoint(const std::filesystem::path& path, ParamGraph& g) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  auto tensors = read_checkpoint(is);
  if (tensors.size() != g.size()) {
    throw DataError("checkpoint " + path.string() + " holds " + std::to_string(tensors.size()) +
                    " tensors, model expects " + std::to_string(g.size()));
  }
  for (auto& [name, t] : tensors) {
    Var p = g.get(name);
    if (p.shape() != t.shape()) {
      throw DataError("checkpoint shape mismatch for " + name + ": " + shape_str(t.shape()) +
                      " vs " + shape_str(p.shape()));
    }
    p.mutable_value() = std::move(t);
  }
}

}  // namespace crisk::grad
