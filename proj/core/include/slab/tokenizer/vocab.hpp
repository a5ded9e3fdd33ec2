#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace slab {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
std::string_view name(TokenId id);
}  // namespace special

// ASCII lowercasing, whitespace runs collapsed to one space, trimmed.
std::string normalize_text(std::string_view text);

// Byte-level BPE vocabulary. Ids [0, 5) are the special tokens; the next ids
// are the single-byte base symbols seen in the training corpus (sorted); the
// rest are produced by merge rules, in rule order. Immutable once built.
//
// Pre-tokenization splits normalized text on spaces and prefixes every word
// with a space byte, so merges never cross word boundaries.
class Vocab {
 public:
  struct Merge {
    TokenId left;
    TokenId right;
    TokenId result;
  };

  // Deterministic for a given (corpus order, target_size, seed); the seed
  // orders pairs with equal counts. Throws when the corpus is empty, the
  // target leaves no room for merges, or the corpus runs out of pairs before
  // reaching target_size.
  static Vocab train(std::span<const std::string> corpus, std::size_t target_size, std::uint64_t seed);

  static Vocab load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);
  void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const;

  // Unframed ids for normalized text; bytes outside the alphabet become UNK.
  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<TokenId> encode_word(std::string_view word) const;

  // Specials render as their bracketed names; whitespace is normalized.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t alphabet_size() const { return alphabet_size_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> find(std::string_view token_bytes) const;
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& fingerprint() const { return fingerprint_; }
  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }

 private:
  Vocab() = default;
  void rebuild_indexes();
  std::string compute_fingerprint() const;

  std::vector<std::string> tokens_;  // raw bytes per id; specials hold their names
  std::vector<Merge> merges_;
  std::size_t alphabet_size_ = 0;
  std::unordered_map<std::string, TokenId> by_token_;
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, TokenId>> merge_rank_;
  std::array<TokenId, 256> byte_id_{};
  std::string fingerprint_;
};

// Printable, whitespace-free UTF-8 rendering of raw token bytes (the usual
// byte-to-unicode table) and its inverse.
std::string bytes_to_printable(std::string_view bytes);
std::string printable_to_bytes(std::string_view text);

}  // namespace slab
