#pragma once

// SMST tensor files.
//
//   offset  size        field
//   0       4           magic "SMST"
//   4       1           version (1)
//   5       1           dtype code (1 = f32, 2 = f64)
//   6       1           ndim
//   7       8 * ndim    extents, little-endian u64
//   ...     n * width   row-major payload, little-endian IEEE-754
//
// No alignment padding anywhere.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "smsl/tensor.hpp"

namespace smsl::smst {

inline constexpr char kMagic[4] = {'S', 'M', 'S', 'T'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kFixedHeader = 7;

using Bytes = std::vector<std::uint8_t>;

namespace detail {

template <typename U>
void put_le(Bytes& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
using bits_t = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace detail

template <typename T>
Bytes encode(const Tensor<T>& t) {
  Bytes out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype_of<T>()));
  if (t.rank() > 255) throw IoError("SMST supports at most 255 dimensions");
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) detail::put_le<std::uint64_t>(out, e);
  out.reserve(out.size() + t.size() * sizeof(T));
  for (T v : t.data()) detail::put_le(out, std::bit_cast<detail::bits_t<T>>(v));
  return out;
}

struct Header {
  DType dtype;
  Shape shape;
  std::size_t payload_offset;
};

inline Header decode_header(const Bytes& b) {
  if (b.size() < kFixedHeader || std::memcmp(b.data(), kMagic, 4) != 0) throw IoError("not an SMST file (bad magic)");
  if (b[4] != kVersion) throw IoError("unsupported SMST version " + std::to_string(b[4]));
  if (b[5] != 1 && b[5] != 2) throw IoError("unknown SMST dtype code " + std::to_string(b[5]));
  Header h{static_cast<DType>(b[5]), {}, kFixedHeader + 8 * std::size_t{b[6]}};
  if (b.size() < h.payload_offset) throw IoError("truncated SMST header");
  for (std::size_t i = 0; i < b[6]; ++i) h.shape.push_back(detail::get_le<std::uint64_t>(b.data() + kFixedHeader + 8 * i));
  const std::size_t width = h.dtype == DType::F32 ? 4 : 8;
  if (b.size() != h.payload_offset + volume(h.shape) * width) {
    throw IoError("SMST payload size does not match header");
  }
  return h;
}

/// Decodes to T, converting from the stored dtype when they differ.
template <typename T>
Tensor<T> decode(const Bytes& b) {
  const Header h = decode_header(b);
  const std::size_t n = volume(h.shape);
  std::vector<T> v(n);
  const std::uint8_t* p = b.data() + h.payload_offset;
  for (std::size_t i = 0; i < n; ++i) {
    if (h.dtype == DType::F32) {
      v[i] = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i)));
    } else {
      v[i] = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 8 * i)));
    }
  }
  return Tensor<T>(h.shape, std::move(v));
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const Bytes& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("short write to " + path.string());
}

template <typename T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  write_file(path, encode(t));
}

template <typename T>
Tensor<T> load(const std::filesystem::path& path) {
  return decode<T>(read_file(path));
}

inline DType stored_dtype(const std::filesystem::path& path) { return decode_header(read_file(path)).dtype; }

}  // namespace smsl::smst
