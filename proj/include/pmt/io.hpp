#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pmt/common.hpp"
#include "pmt/tensor.hpp"

namespace pmt {

// PMTN tensor container: magic "PMTN", version 0x01, dtype byte, rank byte,
// one reserved zero byte, rank x u32 little-endian dims, then the row-major
// payload little-endian. PMTC archives embed named PMTN blobs.
enum class PmtnDtype : std::uint8_t { f32 = 0x01, u8 = 0x02 };

struct PmtnRecord {
  PmtnDtype dtype = PmtnDtype::f32;
  Shape dims;
  std::vector<std::uint8_t> payload;

  Index numel() const { return shape_numel(dims); }
};

std::vector<std::uint8_t> encode_pmtn(const PmtnRecord& rec);
PmtnRecord decode_pmtn(std::span<const std::uint8_t> bytes);
void write_pmtn(const std::string& path, const PmtnRecord& rec);
PmtnRecord read_pmtn(const std::string& path);

using ArchiveEntry = std::pair<std::string, PmtnRecord>;

std::vector<std::uint8_t> encode_pmtc(const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> decode_pmtc(std::span<const std::uint8_t> bytes);
void write_pmtc(const std::string& path, const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> read_pmtc(const std::string& path);

namespace detail {

inline std::uint32_t float_bits(float f) {
  std::uint32_t u;
  static_assert(sizeof(float) == 4);
  __builtin_memcpy(&u, &f, 4);
  return u;
}

inline float bits_float(std::uint32_t u) {
  float f;
  __builtin_memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

template <typename S>
PmtnRecord to_f32_record(const Tensor<S>& t) {
  PmtnRecord rec;
  rec.dtype = PmtnDtype::f32;
  rec.dims = t.shape();
  rec.payload.resize(static_cast<std::size_t>(t.numel()) * 4);
  for (Index i = 0; i < t.numel(); ++i) {
    const std::uint32_t u = detail::float_bits(static_cast<float>(t.data()[i]));
    rec.payload[4 * i + 0] = static_cast<std::uint8_t>(u & 0xff);
    rec.payload[4 * i + 1] = static_cast<std::uint8_t>((u >> 8) & 0xff);
    rec.payload[4 * i + 2] = static_cast<std::uint8_t>((u >> 16) & 0xff);
    rec.payload[4 * i + 3] = static_cast<std::uint8_t>((u >> 24) & 0xff);
  }
  return rec;
}

// Values must already be integers in [0, 255].
template <typename S>
PmtnRecord to_u8_record(const Tensor<S>& t) {
  PmtnRecord rec;
  rec.dtype = PmtnDtype::u8;
  rec.dims = t.shape();
  rec.payload.resize(static_cast<std::size_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) {
    const S v = t.data()[i];
    if (v < S(0) || v > S(255) || v != static_cast<S>(static_cast<std::uint8_t>(v)))
      throw IoError("u8-range", "value " + std::to_string(static_cast<double>(v)) +
                                    " cannot be stored as an unsigned byte");
    rec.payload[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
  }
  return rec;
}

template <typename S>
Tensor<S> tensor_from_record(const PmtnRecord& rec) {
  Tensor<S> t(rec.dims);
  if (rec.dtype == PmtnDtype::f32) {
    for (Index i = 0; i < t.numel(); ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(rec.payload[4 * i + 0]) |
                              (static_cast<std::uint32_t>(rec.payload[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(rec.payload[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(rec.payload[4 * i + 3]) << 24);
      t.data()[i] = static_cast<S>(detail::bits_float(u));
    }
  } else {
    for (Index i = 0; i < t.numel(); ++i)
      t.data()[i] = static_cast<S>(rec.payload[static_cast<std::size_t>(i)]);
  }
  return t;
}

}  // namespace pmt
