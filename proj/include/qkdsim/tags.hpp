#pragma once

// Time-tag streams and their on-disk formats.
//
// CSV:    header "time_ps,channel", one tag per line.
// Binary: 16-byte header ("QTAG", u16 version = 1, 10 reserved bytes), then
//         packed little-endian records of u64 time_ps + u8 channel.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qkdsim/errors.hpp"

namespace qkdsim {

struct TimeTag {
  std::uint64_t time_ps = 0;
  std::uint8_t channel = 0;  ///< basis bit << 1 | outcome bit
};

inline constexpr std::uint8_t channel_of(int basis, int outcome) {
  return static_cast<std::uint8_t>((basis << 1) | outcome);
}
inline constexpr int basis_of(std::uint8_t channel) { return channel >> 1; }
inline constexpr int outcome_of(std::uint8_t channel) { return channel & 1; }

/// Tags stored column-wise; times are nondecreasing.
struct TagStream {
  std::string party;
  double nominal_offset_s = 0.0;  ///< clock transform used when synthesized
  double nominal_drift = 0.0;
  std::vector<std::uint64_t> times;
  std::vector<std::uint8_t> channels;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  TimeTag operator[](std::size_t i) const { return {times[i], channels[i]}; }
  void reserve(std::size_t n) {
    times.reserve(n);
    channels.reserve(n);
  }
  void push_back(TimeTag t) {
    times.push_back(t.time_ps);
    channels.push_back(t.channel);
  }
  bool operator==(const TagStream& o) const { return times == o.times && channels == o.channels; }
};

inline void check_stream(const TagStream& s) {
  if (s.times.size() != s.channels.size()) throw FormatError("tag stream columns differ in length");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.channels[i] > 3) throw FormatError("tag " + std::to_string(i) + ": channel must be 0-3");
    if (i > 0 && s.times[i] < s.times[i - 1]) throw FormatError("tag " + std::to_string(i) + ": times decrease");
  }
}

inline void write_tags_csv(std::ostream& os, const TagStream& s) {
  os << "time_ps,channel\n";
  std::string line;
  for (std::size_t i = 0; i < s.size(); ++i) {
    line = std::to_string(s.times[i]);
    line += ',';
    line += static_cast<char>('0' + s.channels[i]);
    line += '\n';
    os << line;
  }
}

inline TagStream read_tags_csv(std::istream& is) {
  TagStream s;
  std::string line;
  if (!std::getline(is, line)) throw FormatError("tag CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time_ps,channel") throw FormatError("tag CSV: expected header 'time_ps,channel'");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    std::uint64_t t = 0;
    unsigned ch = 0;
    const char* end = line.data() + line.size();
    bool ok = comma != std::string::npos;
    if (ok) {
      auto r1 = std::from_chars(line.data(), line.data() + comma, t);
      auto r2 = std::from_chars(line.data() + comma + 1, end, ch);
      ok = r1.ec == std::errc{} && r1.ptr == line.data() + comma && r2.ec == std::errc{} && r2.ptr == end;
    }
    if (!ok || ch > 3) throw FormatError("tag CSV line " + std::to_string(lineno) + ": malformed record");
    if (!s.empty() && t < s.times.back()) {
      throw FormatError("tag CSV line " + std::to_string(lineno) + ": times decrease");
    }
    s.push_back({t, static_cast<std::uint8_t>(ch)});
  }
  return s;
}

inline constexpr std::size_t kTagHeaderBytes = 16;
inline constexpr std::size_t kTagRecordBytes = 9;
inline constexpr std::uint16_t kTagFormatVersion = 1;

namespace detail {

inline void store_le64(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

inline std::uint64_t load_le64(const unsigned char* p) {
  if constexpr (std::endian::native == std::endian::little) {
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    return v;
  } else {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
}

}  // namespace detail

inline void write_tags_binary(std::ostream& os, const TagStream& s) {
  std::array<unsigned char, kTagHeaderBytes> header{};
  std::memcpy(header.data(), "QTAG", 4);
  header[4] = kTagFormatVersion & 0xff;
  header[5] = kTagFormatVersion >> 8;
  os.write(reinterpret_cast<const char*>(header.data()), header.size());
  constexpr std::size_t chunk = 1 << 16;
  std::vector<unsigned char> buf(chunk * kTagRecordBytes);
  for (std::size_t i = 0; i < s.size(); i += chunk) {
    const std::size_t n = std::min(chunk, s.size() - i);
    for (std::size_t k = 0; k < n; ++k) {
      detail::store_le64(&buf[k * kTagRecordBytes], s.times[i + k]);
      buf[k * kTagRecordBytes + 8] = s.channels[i + k];
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * kTagRecordBytes));
  }
}

/// Parses a binary tag image held in memory.
inline TagStream parse_tags_binary(const unsigned char* data, std::size_t size) {
  if (size < kTagHeaderBytes || std::memcmp(data, "QTAG", 4) != 0) throw FormatError("binary tags: bad magic");
  const unsigned version = data[4] | (unsigned{data[5]} << 8);
  if (version != kTagFormatVersion) throw FormatError("binary tags: unsupported version " + std::to_string(version));
  const std::size_t body = size - kTagHeaderBytes;
  if (body % kTagRecordBytes != 0) throw FormatError("binary tags: truncated record");
  const std::size_t n = body / kTagRecordBytes;
  TagStream s;
  s.times.resize(n);
  s.channels.resize(n);
  const unsigned char* p = data + kTagHeaderBytes;
  std::uint64_t prev = 0;
  bool bad_channel = false, decreasing = false;
  for (std::size_t i = 0; i < n; ++i, p += kTagRecordBytes) {
    const std::uint64_t t = detail::load_le64(p);
    const std::uint8_t ch = p[8];
    decreasing |= t < prev;
    bad_channel |= ch > 3;
    prev = t;
    s.times[i] = t;
    s.channels[i] = ch;
  }
  if (bad_channel || decreasing) check_stream(s);  // locate the offending record
  return s;
}

inline TagStream read_tags_binary(std::istream& is) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_tags_binary(bytes.data(), bytes.size());
}

inline TagStream read_tags_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tag file '" + path + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (size >= 4 && std::memcmp(bytes.data(), "QTAG", 4) == 0) return parse_tags_binary(bytes.data(), size);
  std::istringstream text(std::string(bytes.begin(), bytes.end()));
  return read_tags_csv(text);
}

}  // namespace qkdsim
