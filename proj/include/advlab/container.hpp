#pragma once

// Binary container shared by network checkpoints and exported datasets.
//
// Layout (all integers little-endian, floats IEEE-754 binary64 little-endian):
//
//   char[8]   magic        "ADVLABCK" (checkpoint) or "ADVLABDS" (dataset)
//   u32       version      kContainerVersion
//   u32 + []  prng id      length-prefixed UTF-8
//   u32 + []  spec string  length-prefixed UTF-8
//   u32       block count
//   per block:
//     u32       rank
//     u64[rank] dimensions
//     f64[...]  values, row-major
//
// Blocks appear in declaration order of the owning object.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "advlab/numerics.hpp"

namespace advlab {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'D', 'V', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::array<char, 8> kDatasetMagic{'A', 'D', 'V', 'L', 'A', 'B', 'D', 'S'};

struct Container {
  std::array<char, 8> magic{};
  std::uint32_t version = kContainerVersion;
  std::string prng_id;
  std::string spec;
  std::vector<Tensor> blocks;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  require(is.gcount() == static_cast<std::streamsize>(sizeof(T)), ErrorKind::format,
          "truncated container file " + path);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const std::string& path) {
  const auto n = get_le<std::uint32_t>(is, path);
  std::string s(n, '\0');
  is.read(s.data(), n);
  require(is.gcount() == static_cast<std::streamsize>(n), ErrorKind::format,
          "truncated container file " + path);
  return s;
}

}  // namespace detail

inline void write_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path + " for writing");
  os.write(c.magic.data(), static_cast<std::streamsize>(c.magic.size()));
  detail::put_le<std::uint32_t>(os, c.version);
  detail::put_string(os, c.prng_id);
  detail::put_string(os, c.spec);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.blocks.size()));
  for (const Tensor& t : c.blocks) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (double v : t.data()) detail::put_le<double>(os, v);
  }
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path);
}

inline Container read_container(const std::string& path, const std::array<char, 8>& magic) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path);
  Container c;
  is.read(c.magic.data(), static_cast<std::streamsize>(c.magic.size()));
  require(is.gcount() == 8, ErrorKind::format, "truncated container file " + path);
  require(c.magic == magic, ErrorKind::format,
          "bad container magic '" + std::string(c.magic.data(), 8) + "' in " + path);
  c.version = detail::get_le<std::uint32_t>(is, path);
  require(c.version == kContainerVersion, ErrorKind::format,
          "unsupported container version " + std::to_string(c.version) + " in " + path);
  c.prng_id = detail::get_string(is, path);
  c.spec = detail::get_string(is, path);
  const auto n_blocks = detail::get_le<std::uint32_t>(is, path);
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    const auto rank = detail::get_le<std::uint32_t>(is, path);
    require(rank >= 1 && rank <= 8, ErrorKind::format, "bad block rank in " + path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is, path));
    Tensor t(shape);
    for (double& v : t.data()) v = detail::get_le<double>(is, path);
    c.blocks.push_back(std::move(t));
  }
  return c;
}

}  // namespace advlab
