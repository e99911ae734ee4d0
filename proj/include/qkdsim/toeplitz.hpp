#pragma once

// Packed bit strings and Toeplitz-matrix hashing for privacy amplification.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qkdsim/errors.hpp"

namespace qkdsim {

/// Bit string packed LSB-first into 64-bit words. Bit i of the string is
/// the i-th key bit; hex output is MSB-first per byte.
class BitString {
 public:
  BitString() = default;
  explicit BitString(std::size_t n) : size_(n), words_((n + 63) / 64, 0) {}

  static BitString from_bits(const std::vector<std::uint8_t>& bits) {
    BitString s(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) s.set(i, bits[i] != 0);
    return s;
  }

  /// Bytes expanded MSB-first, so bit 0 is the top bit of byte 0.
  static BitString from_bytes(const std::vector<std::uint8_t>& bytes) {
    BitString s(bytes.size() * 8);
    for (std::size_t i = 0; i < s.size(); ++i) s.set(i, (bytes[i / 8] >> (7 - i % 8)) & 1u);
    return s;
  }

  std::size_t size() const { return size_; }
  bool get(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
  void set(std::size_t i, bool v) {
    const std::uint64_t m = std::uint64_t{1} << (i % 64);
    if (v) words_[i / 64] |= m; else words_[i / 64] &= ~m;
  }
  const std::vector<std::uint64_t>& words() const { return words_; }

  /// 64 bits starting at bit `pos`; bits past the end read as zero.
  std::uint64_t window64(std::size_t pos) const {
    const std::size_t w = pos / 64, s = pos % 64;
    const std::uint64_t lo = w < words_.size() ? words_[w] : 0;
    if (s == 0) return lo;
    const std::uint64_t hi = w + 1 < words_.size() ? words_[w + 1] : 0;
    return (lo >> s) | (hi << (64 - s));
  }

  BitString operator^(const BitString& o) const {
    if (o.size_ != size_) throw LengthError("bit strings differ in length");
    BitString r = *this;
    for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] ^= o.words_[i];
    return r;
  }
  bool operator==(const BitString& o) const { return size_ == o.size_ && words_ == o.words_; }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  std::string to_hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    const std::size_t bytes = (size_ + 7) / 8;
    out.reserve(2 * bytes);
    for (std::size_t b = 0; b < bytes; ++b) {
      unsigned v = 0;
      for (std::size_t k = 0; k < 8; ++k) {
        const std::size_t i = 8 * b + k;
        v = (v << 1) | (i < size_ && get(i) ? 1u : 0u);
      }
      out += digits[v >> 4];
      out += digits[v & 15];
    }
    return out;
  }

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// m x n Toeplitz matrix T[i][j] = r[i - j + n - 1], with the n + m - 1
/// diagonal bits r drawn from mt19937_64(seed), 64 bits per draw.
class ToeplitzHash {
 public:
  ToeplitzHash(std::size_t in_bits, std::size_t out_bits, std::uint64_t seed)
      : n_(in_bits), m_(out_bits), diag_(in_bits + out_bits > 0 ? in_bits + out_bits - 1 : 0) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> words((diag_.size() + 63) / 64);
    for (auto& w : words) w = rng();
    for (std::size_t i = 0; i < diag_.size(); ++i) diag_.set(i, (words[i / 64] >> (i % 64)) & 1u);
  }

  std::size_t input_bits() const { return n_; }
  std::size_t output_bits() const { return m_; }

  BitString apply(const BitString& x) const {
    if (x.size() != n_) throw LengthError("Toeplitz hash: input length mismatch");
    // y_i = XOR_l r[i + l] x[n - 1 - l]; reverse x once so both run forward
    BitString rev(n_);
    for (std::size_t j = 0; j < n_; ++j) rev.set(n_ - 1 - j, x.get(j));
    const auto& xw = rev.words();
    BitString y(m_);
    for (std::size_t i = 0; i < m_; ++i) {
      std::uint64_t acc = 0;
      for (std::size_t w = 0; w < xw.size(); ++w) acc ^= diag_.window64(i + 64 * w) & xw[w];
      y.set(i, std::popcount(acc) & 1);
    }
    return y;
  }

 private:
  std::size_t n_, m_;
  BitString diag_;
};

/// Compresses `key` to `out_len` bits.
inline BitString privacy_amplify(const BitString& key, std::size_t out_len, std::uint64_t seed) {
  if (out_len > key.size()) {
    throw LengthError("privacy amplification: output length " + std::to_string(out_len) + " exceeds input length " +
                      std::to_string(key.size()));
  }
  if (out_len == 0) return BitString(0);
  return ToeplitzHash(key.size(), out_len, seed).apply(key);
}

}  // namespace qkdsim
