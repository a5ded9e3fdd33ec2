#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace slab {

// 64-bit FNV-1a. Used for vocabulary fingerprints, checkpoint ids and the
// checkpoint trailer checksum; stable across platforms and builds.
class Fnv1a64 {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  void update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= kPrime;
    }
  }
  void update(std::string_view s) { update(std::as_bytes(std::span(s.data(), s.size()))); }
  void update_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (v >> (8 * i)) & 0xffU;
      state_ *= kPrime;
    }
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  Fnv1a64 h;
  h.update(s);
  return h.digest();
}

std::string to_hex(std::uint64_t v);

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

}  // namespace slab
