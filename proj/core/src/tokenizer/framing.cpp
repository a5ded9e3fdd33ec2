#include "slab/tokenizer/framing.hpp"

#include "slab/error.hpp"

namespace slab {

std::size_t EncodedPair::real_tokens() const {
  std::size_t n = 0;
  for (auto m : attention_mask) n += m;
  return n;
}

void truncate_pair(std::vector<TokenId>& a, std::vector<TokenId>& b, std::size_t budget) {
  while (a.size() + b.size() > budget) {
    if (a.size() >= b.size())
      a.pop_back();
    else
      b.pop_back();
  }
}

EncodedPair frame_pair(std::span<const TokenId> a, std::optional<std::span<const TokenId>> b, std::size_t max_len) {
  const std::size_t overhead = b ? 3 : 2;
  require(max_len >= overhead, ErrorCode::kInvalidArgument,
          "frame_pair: max_len " + std::to_string(max_len) + " leaves no room for " + std::to_string(overhead) +
              " framing tokens");
  std::vector<TokenId> first(a.begin(), a.end());
  std::vector<TokenId> second;
  if (b) second.assign(b->begin(), b->end());
  truncate_pair(first, second, max_len - overhead);

  EncodedPair out;
  out.ids.reserve(max_len);
  out.ids.push_back(special::kCls);
  out.ids.insert(out.ids.end(), first.begin(), first.end());
  out.ids.push_back(special::kSep);
  out.segments.assign(out.ids.size(), 0);
  if (b) {
    out.ids.insert(out.ids.end(), second.begin(), second.end());
    out.ids.push_back(special::kSep);
    out.segments.resize(out.ids.size(), 1);
  }
  out.attention_mask.assign(out.ids.size(), 1);
  out.ids.resize(max_len, special::kPad);
  out.segments.resize(max_len, 0);
  out.attention_mask.resize(max_len, 0);
  return out;
}

}  // namespace slab
