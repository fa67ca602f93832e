#include "pmt/io.hpp"

#include <fstream>

namespace pmt {

namespace {

constexpr std::uint8_t kMagicN[4] = {'P', 'M', 'T', 'N'};
constexpr std::uint8_t kMagicC[4] = {'P', 'M', 'T', 'C'};
constexpr std::uint8_t kVersion = 0x01;
constexpr Index kMaxRank = 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

struct Cursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  std::uint8_t u8(const char* what) {
    if (pos + 1 > bytes.size()) throw IoError("truncated-file", std::string("reading ") + what);
    return bytes[pos++];
  }
  std::uint16_t u16(const char* what) {
    if (pos + 2 > bytes.size()) throw IoError("truncated-file", std::string("reading ") + what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                            (static_cast<std::uint16_t>(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    if (pos + 4 > bytes.size()) throw IoError("truncated-file", std::string("reading ") + what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[pos + static_cast<std::size_t>(i)];
    pos += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (pos + n > bytes.size()) throw IoError("truncated-file", std::string("reading ") + what);
    auto s = bytes.subspan(pos, n);
    pos += n;
    return s;
  }
};

std::size_t dtype_size(PmtnDtype d) { return d == PmtnDtype::f32 ? 4 : 1; }

PmtnRecord decode_pmtn_cursor(Cursor& cur) {
  for (std::uint8_t m : kMagicN)
    if (cur.u8("magic") != m) throw IoError("bad-magic", "expected PMTN container");
  if (cur.u8("version") != kVersion) throw IoError("bad-version", "unsupported PMTN version");
  const std::uint8_t dtype_byte = cur.u8("dtype");
  if (dtype_byte != 0x01 && dtype_byte != 0x02)
    throw IoError("bad-dtype", "dtype byte " + std::to_string(dtype_byte));
  const std::uint8_t rank = cur.u8("rank");
  if (rank > kMaxRank) throw IoError("bad-rank", "rank " + std::to_string(rank));
  if (cur.u8("reserved") != 0x00) throw IoError("bad-reserved", "reserved byte must be zero");

  PmtnRecord rec;
  rec.dtype = static_cast<PmtnDtype>(dtype_byte);
  rec.dims.resize(rank);
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = cur.u32("dimension");
    if (d == 0) throw IoError("bad-dimension", "zero dimension");
    rec.dims[i] = static_cast<Index>(d);
  }
  const std::size_t bytes_needed =
      static_cast<std::size_t>(rec.numel()) * dtype_size(rec.dtype);
  auto payload = cur.take(bytes_needed, "payload");
  rec.payload.assign(payload.begin(), payload.end());
  return rec;
}

}  // namespace

std::vector<std::uint8_t> encode_pmtn(const PmtnRecord& rec) {
  if (static_cast<Index>(rec.dims.size()) > kMaxRank)
    throw IoError("bad-rank", "rank " + std::to_string(rec.dims.size()));
  for (Index d : rec.dims)
    if (d < 1 || d > 0xffffffffLL) throw IoError("bad-dimension", "dimension " + std::to_string(d));
  if (rec.payload.size() != static_cast<std::size_t>(rec.numel()) * dtype_size(rec.dtype))
    throw IoError("bad-payload", "payload size does not match " + shape_str(rec.dims));

  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * rec.dims.size() + rec.payload.size());
  out.insert(out.end(), std::begin(kMagicN), std::end(kMagicN));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(rec.dtype));
  out.push_back(static_cast<std::uint8_t>(rec.dims.size()));
  out.push_back(0x00);
  for (Index d : rec.dims) put_u32(out, static_cast<std::uint32_t>(d));
  out.insert(out.end(), rec.payload.begin(), rec.payload.end());
  return out;
}

PmtnRecord decode_pmtn(std::span<const std::uint8_t> bytes) {
  Cursor cur{bytes};
  PmtnRecord rec = decode_pmtn_cursor(cur);
  if (cur.pos != bytes.size()) throw IoError("trailing-bytes", "PMTN container has trailing bytes");
  return rec;
}

void write_pmtn(const std::string& path, const PmtnRecord& rec) {
  const auto bytes = encode_pmtn(rec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot-open-file", path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write-failed", path);
}

PmtnRecord read_pmtn(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot-open-file", path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_pmtn(bytes);
}

std::vector<std::uint8_t> encode_pmtc(const std::vector<ArchiveEntry>& entries) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagicC), std::end(kMagicC));
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, rec] : entries) {
    if (name.size() > 0xffff) throw IoError("name-too-long", name.substr(0, 64));
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto blob = encode_pmtn(rec);
    out.insert(out.end(), blob.begin(), blob.end());
  }
  return out;
}

std::vector<ArchiveEntry> decode_pmtc(std::span<const std::uint8_t> bytes) {
  Cursor cur{bytes};
  for (std::uint8_t m : kMagicC)
    if (cur.u8("magic") != m) throw IoError("bad-magic", "expected PMTC archive");
  const std::uint32_t count = cur.u32("entry count");
  std::vector<ArchiveEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = cur.u16("name length");
    auto name_bytes = cur.take(name_len, "entry name");
    std::string name(name_bytes.begin(), name_bytes.end());
    entries.emplace_back(std::move(name), decode_pmtn_cursor(cur));
  }
  if (cur.pos != bytes.size()) throw IoError("trailing-bytes", "PMTC archive has trailing bytes");
  return entries;
}

void write_pmtc(const std::string& path, const std::vector<ArchiveEntry>& entries) {
  const auto bytes = encode_pmtc(entries);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot-open-file", path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write-failed", path);
}

std::vector<ArchiveEntry> read_pmtc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot-open-file", path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_pmtc(bytes);
}

}  // namespace pmt
