#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/crc32.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

/// Binary dataset container: fixed little-endian header followed by a
/// packed f64 payload of count x dim values. The checksum covers the
/// payload; truncation and bit flips are read errors, never silently
/// accepted.
struct ContainerHeader {
  static constexpr std::array<char, 4> kMagic = {'G', 'F', 'D', 'C'};
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t kind = 0;
  std::uint64_t count = 0;
  std::uint64_t dim = 0;
  // Payload-kind specific extras (e.g. column split of a paired
  // dataset row); reserved zero otherwise.
  std::uint32_t aux0 = 0, aux1 = 0, aux2 = 0;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline void write_container(const std::string& path, const ContainerHeader& header,
                            std::span<const double> payload) {
  if (payload.size() != header.count * header.dim)
    throw std::invalid_argument("write_container: payload size does not match count*dim");
  std::string bytes;
  bytes.reserve(40 + payload.size() * 8);
  bytes.append(ContainerHeader::kMagic.data(), 4);
  detail::put_le<std::uint32_t>(bytes, ContainerHeader::kVersion);
  detail::put_le<std::uint32_t>(bytes, header.kind);
  detail::put_le<std::uint64_t>(bytes, header.count);
  detail::put_le<std::uint64_t>(bytes, header.dim);
  detail::put_le<std::uint32_t>(bytes, header.aux0);
  detail::put_le<std::uint32_t>(bytes, header.aux1);
  detail::put_le<std::uint32_t>(bytes, header.aux2);
  std::string body;
  body.reserve(payload.size() * 8);
  for (double d : payload) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    detail::put_le<std::uint64_t>(body, u);
  }
  const std::uint32_t crc =
      crc32({reinterpret_cast<const std::uint8_t*>(body.data()), body.size()});
  detail::put_le<std::uint32_t>(bytes, crc);
  bytes += body;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_container: cannot open " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write_container: write failed for " + path);
}

struct ContainerData {
  ContainerHeader header;
  Vec payload;
};

inline ContainerData read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_container: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  constexpr std::size_t kHeaderSize = 4 + 4 + 4 + 8 + 8 + 4 + 4 + 4 + 4;
  if (bytes.size() < kHeaderSize)
    throw std::runtime_error("read_container: truncated header in " + path);
  if (std::memcmp(bytes.data(), ContainerHeader::kMagic.data(), 4) != 0)
    throw std::runtime_error("read_container: bad magic in " + path);
  std::size_t off = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + off);
  off += 4;
  if (version != ContainerHeader::kVersion)
    throw std::runtime_error("read_container: unsupported version " + std::to_string(version));
  ContainerData out;
  out.header.kind = detail::get_le<std::uint32_t>(bytes.data() + off);
  off += 4;
  out.header.count = detail::get_le<std::uint64_t>(bytes.data() + off);
  off += 8;
  out.header.dim = detail::get_le<std::uint64_t>(bytes.data() + off);
  off += 8;
  out.header.aux0 = detail::get_le<std::uint32_t>(bytes.data() + off);
  off += 4;
  out.header.aux1 = detail::get_le<std::uint32_t>(bytes.data() + off);
  off += 4;
  out.header.aux2 = detail::get_le<std::uint32_t>(bytes.data() + off);
  off += 4;
  const auto stored_crc = detail::get_le<std::uint32_t>(bytes.data() + off);
  off += 4;
  const std::uint64_t n = out.header.count * out.header.dim;
  if (bytes.size() != off + n * 8)
    throw std::runtime_error("read_container: truncated payload in " + path);
  const std::uint32_t crc = crc32({bytes.data() + off, n * 8});
  if (crc != stored_crc) throw std::runtime_error("read_container: checksum mismatch in " + path);
  out.payload.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t u = detail::get_le<std::uint64_t>(bytes.data() + off + i * 8);
    std::memcpy(&out.payload[i], &u, 8);
  }
  return out;
}

}  // namespace geoflow
