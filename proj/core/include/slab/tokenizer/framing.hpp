#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "slab/tokenizer/vocab.hpp"

namespace slab {

// Longest sequence the encoder accepts.
inline constexpr std::size_t kMaxSequenceLength = 512;

struct EncodedPair {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> attention_mask;

  std::size_t length() const { return ids.size(); }
  std::size_t real_tokens() const;
};

// [CLS] a [SEP] (b [SEP]) padded to max_len. Over-long input is truncated
// from the tail of whichever segment is currently longer, one token at a time
// (segment a on ties).
EncodedPair frame_pair(std::span<const TokenId> a, std::optional<std::span<const TokenId>> b, std::size_t max_len);

// Truncates in place so that a.size() + b.size() <= budget, same policy.
void truncate_pair(std::vector<TokenId>& a, std::vector<TokenId>& b, std::size_t budget);

}  // namespace slab
