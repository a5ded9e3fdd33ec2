#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slab/tokenizer/framing.hpp"

namespace slab {

// BIO tag inventory. "O" is always id 0, followed by B-<type>, I-<type> for
// each entity type in sorted order.
class TagSet {
 public:
  TagSet() : TagSet(std::vector<std::string>{}) {}
  explicit TagSet(std::vector<std::string> types);

  // Collects entity types from tag sequences. Throws kInvalidArgument for a
  // tag outside the BIO scheme.
  static TagSet from_sequences(std::span<const std::vector<std::string>> sequences);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& types() const { return types_; }
  const std::string& name(std::int32_t id) const;
  // Throws kInvalidArgument for unknown tags.
  std::int32_t id(const std::string& tag) const;
  std::vector<std::int32_t> ids(std::span<const std::string> tags) const;

 private:
  std::vector<std::string> types_;
  std::vector<std::string> names_;
  std::map<std::string, std::int32_t> index_;
};

// Splits a BIO tag into (prefix, type); throws kInvalidArgument when malformed.
std::pair<char, std::string> parse_bio(const std::string& tag);

// Pre-split words framed as one segment; each word is tagged at its first
// subword. Words that do not fit are dropped from the tail.
struct WordPieces {
  EncodedPair pair;
  std::vector<std::size_t> first_subword;  // position in pair.ids per kept word
};

WordPieces align_words(const Vocab& vocab, std::span<const std::string> words, std::size_t max_len);

}  // namespace slab
