#pragma once

// Binary checkpoint container: parameter name -> shape + flat values.
//
// Layout (little-endian):
//   "MDRCKPT\0"  u32 version  u8 bytes_per_value
//   u64 metadata_len  metadata bytes (free-form, usually JSON)
//   u64 tensor_count
//   per tensor: u32 name_len  name  u32 rank  u64 dims[rank]  values[prod(dims)]
//
// Values are written as raw IEEE bytes, so a reload is bit-exact.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "mdrec/parameters.hpp"

namespace mdrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kCheckpointMagic = {'M', 'D', 'R', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

template <typename Real>
struct Checkpoint {
  std::string metadata;
  ParameterStore<Real> params;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: truncated input");
  return v;
}

inline std::string read_bytes(std::istream& is, std::uint64_t n) {
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 32;
  if (n > kLimit) throw CheckpointError("checkpoint: implausible field length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("checkpoint: truncated input");
  return s;
}

}  // namespace detail

template <typename Real>
void write_checkpoint(std::ostream& os, const ParameterStore<Real>& params,
                      const std::string& metadata = {}) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<std::uint8_t>(sizeof(Real)));
  detail::write_pod(os, static_cast<std::uint64_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  detail::write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(Real)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed");
}

template <typename Real>
Checkpoint<Real> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw CheckpointError("checkpoint: bad magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto width = detail::read_pod<std::uint8_t>(is);
  if (width != sizeof(Real)) {
    throw CheckpointError("checkpoint: stored with " + std::to_string(width * 8) +
                          "-bit values, requested " + std::to_string(sizeof(Real) * 8));
  }
  Checkpoint<Real> out;
  out.metadata = detail::read_bytes(is, detail::read_pod<std::uint64_t>(is));
  const auto count = detail::read_pod<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = detail::read_bytes(is, detail::read_pod<std::uint32_t>(is));
    const auto rank = detail::read_pod<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw CheckpointError("checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
    Tensor<Real> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    if (!is) throw CheckpointError("checkpoint: truncated values for '" + name + "'");
    out.params.add(name, std::move(t));
  }
  return out;
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Real>& params,
                     const std::string& metadata = {}) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, params, metadata);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  return read_checkpoint<Real>(is);
}

/// 64-bit FNV-1a over raw bytes; used to prove tensors were not modified.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes,
                           std::uint64_t h = 1469598103934665603ull) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 1099511628211ull;
  }
  return h;
}

template <typename Real>
std::uint64_t checksum(std::span<const Real> values) {
  return fnv1a(std::as_bytes(values));
}

}  // namespace mdrec
