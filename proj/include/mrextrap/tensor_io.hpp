#pragma once

// Binary tensor container ("MRXT").
//
// Single tensor:
//   magic "MRXT" | u8 version (1) | u8 dtype (0 = float32) | u8 ndim |
//   ndim x u64 dims | product(dims) x float32 payload
// Named container:
//   u32 entry count | per entry: u16 name length, UTF-8 name, single tensor
// All multi-byte fields are little-endian regardless of host.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "mrextrap/core.hpp"

namespace mrextrap::io {

inline constexpr std::array<char, 4> kMagic{'M', 'R', 'X', 'T'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  friend bool operator==(const RawTensor&, const RawTensor&) = default;
};

using NamedTensors = std::vector<std::pair<std::string, RawTensor>>;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(Errc::truncated_payload, "unexpected end of tensor stream");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io, "cannot open for writing: " + path.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io, "cannot open for reading: " + path.string());
  return is;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const RawTensor& t) {
  if (t.dims.size() > 255) throw Error(Errc::invalid_argument, "too many dimensions");
  std::uint64_t count = 1;
  for (auto d : t.dims) count *= d;
  if (count != t.values.size()) throw Error(Errc::shape_mismatch, "payload size does not match dims");
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint8_t>(os, kVersion);
  detail::put_le<std::uint8_t>(os, kDtypeFloat32);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_le<std::uint64_t>(os, d);
  for (float v : t.values) detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
}

inline RawTensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4) throw Error(Errc::truncated_payload, "missing magic");
  if (magic != kMagic) throw Error(Errc::bad_magic, "not an MRXT tensor");
  const auto version = detail::get_le<std::uint8_t>(is);
  if (version != kVersion) {
    throw Error(Errc::version_mismatch, "tensor version " + std::to_string(version));
  }
  const auto dtype = detail::get_le<std::uint8_t>(is);
  if (dtype != kDtypeFloat32) throw Error(Errc::unsupported_dtype, "dtype " + std::to_string(dtype));
  const auto ndim = detail::get_le<std::uint8_t>(is);
  RawTensor t;
  std::uint64_t count = 1;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    t.dims.push_back(detail::get_le<std::uint64_t>(is));
    count *= t.dims.back();
  }
  t.values.resize(count);
  for (auto& v : t.values) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(is));
  return t;
}

inline void write_container(std::ostream& os, const NamedTensors& entries) {
  std::set<std::string> seen;
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (!seen.insert(name).second) throw Error(Errc::invalid_argument, "duplicate tensor name: " + name);
    if (name.size() > 0xFFFF) throw Error(Errc::invalid_argument, "tensor name too long");
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
}

inline NamedTensors read_container(std::istream& is) {
  const auto count = detail::get_le<std::uint32_t>(is);
  NamedTensors entries;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (is.gcount() != len) throw Error(Errc::truncated_payload, "truncated tensor name");
    if (!seen.insert(name).second) throw Error(Errc::invalid_argument, "duplicate tensor name: " + name);
    entries.emplace_back(std::move(name), read_tensor(is));
  }
  return entries;
}

inline void write_tensor(const std::filesystem::path& path, const RawTensor& t) {
  auto os = detail::open_out(path);
  write_tensor(os, t);
  if (!os) throw Error(Errc::io, "write failed: " + path.string());
}

inline RawTensor read_tensor(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_tensor(is);
}

inline void write_container(const std::filesystem::path& path, const NamedTensors& entries) {
  auto os = detail::open_out(path);
  write_container(os, entries);
  if (!os) throw Error(Errc::io, "write failed: " + path.string());
}

inline NamedTensors read_container(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_container(is);
}

template <typename G>
RawTensor to_raw(const G& grid) {
  RawTensor t;
  t.dims.assign(grid.dims().begin(), grid.dims().end());
  t.values.reserve(grid.size());
  for (auto v : grid.values()) t.values.push_back(static_cast<float>(v));
  return t;
}

template <typename G>
G from_raw(const RawTensor& t) {
  std::vector<std::size_t> dims(t.dims.begin(), t.dims.end());
  std::vector<typename G::value_type> values(t.values.begin(), t.values.end());
  return G(std::move(dims), std::move(values));
}

template <typename G>
void write_grid(const std::filesystem::path& path, const G& grid) {
  write_tensor(path, to_raw(grid));
}

template <typename G>
G read_grid(const std::filesystem::path& path) {
  return from_raw<G>(read_tensor(path));
}

inline const RawTensor& find_tensor(const NamedTensors& entries, const std::string& name) {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw Error(Errc::invalid_argument, "tensor not found in container: " + name);
}

}  // namespace mrextrap::io
