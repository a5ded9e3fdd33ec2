#include "slab/heads/ner.hpp"

#include <algorithm>
#include <set>

#include "slab/error.hpp"

namespace slab {

std::pair<char, std::string> parse_bio(const std::string& tag) {
  if (tag == "O") return {'O', ""};
  require(tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-', ErrorCode::kInvalidArgument,
          "tag '" + tag + "' is not in the BIO scheme");
  return {tag[0], tag.substr(2)};
}

TagSet::TagSet(std::vector<std::string> types) : types_(std::move(types)) {
  std::sort(types_.begin(), types_.end());
  types_.erase(std::unique(types_.begin(), types_.end()), types_.end());
  names_.push_back("O");
  for (const auto& t : types_) {
    require(!t.empty(), ErrorCode::kInvalidArgument, "empty entity type");
    names_.push_back("B-" + t);
    names_.push_back("I-" + t);
  }
  for (std::size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = static_cast<std::int32_t>(i);
}

TagSet TagSet::from_sequences(std::span<const std::vector<std::string>> sequences) {
  std::set<std::string> types;
  for (const auto& seq : sequences)
    for (const auto& tag : seq) {
      auto [prefix, type] = parse_bio(tag);
      if (prefix != 'O') types.insert(type);
    }
  return TagSet(std::vector<std::string>(types.begin(), types.end()));
}

const std::string& TagSet::name(std::int32_t id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < names_.size(), ErrorCode::kInvalidArgument,
          "tag id " + std::to_string(id) + " out of range");
  return names_[static_cast<std::size_t>(id)];
}

std::int32_t TagSet::id(const std::string& tag) const {
  auto it = index_.find(tag);
  require(it != index_.end(), ErrorCode::kInvalidArgument, "unknown tag '" + tag + "'");
  return it->second;
}

std::vector<std::int32_t> TagSet::ids(std::span<const std::string> tags) const {
  std::vector<std::int32_t> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.push_back(id(t));
  return out;
}

WordPieces align_words(const Vocab& vocab, std::span<const std::string> words, std::size_t max_len) {
  require(max_len >= 3, ErrorCode::kInvalidArgument, "align_words: max_len must leave room for one word");
  std::vector<TokenId> ids;
  std::vector<std::size_t> first;
  for (const auto& w : words) {
    auto piece = vocab.encode(w);
    if (piece.empty()) piece.push_back(special::kUnk);
    if (ids.size() + piece.size() + 2 > max_len) break;
    first.push_back(ids.size() + 1);  // after [CLS]
    ids.insert(ids.end(), piece.begin(), piece.end());
  }
  return {frame_pair(ids, std::nullopt, max_len), std::move(first)};
}

}  // namespace slab
