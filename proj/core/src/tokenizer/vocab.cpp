#include "slab/tokenizer/vocab.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "slab/error.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/util/hash.hpp"
#include "slab/util/io.hpp"

namespace slab {

namespace special {
std::string_view name(TokenId id) {
  switch (id) {
    case kPad: return "[PAD]";
    case kUnk: return "[UNK]";
    case kCls: return "[CLS]";
    case kSep: return "[SEP]";
    case kMask: return "[MASK]";
    default: return "";
  }
}
}  // namespace special

namespace {

constexpr std::string_view kHeaderTag = "vocab-v1";

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) | static_cast<std::uint32_t>(right);
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Byte -> code point table used for the printable rendering.
std::array<char32_t, 256> byte_to_codepoint_table() {
  std::array<char32_t, 256> table{};
  std::array<bool, 256> direct{};
  for (int b = 33; b <= 126; ++b) direct[b] = true;
  for (int b = 161; b <= 172; ++b) direct[b] = true;
  for (int b = 174; b <= 255; ++b) direct[b] = true;
  char32_t next = 256;
  for (int b = 0; b < 256; ++b) table[b] = direct[b] ? static_cast<char32_t>(b) : next++;
  return table;
}

const std::array<char32_t, 256>& byte_table() {
  static const auto table = byte_to_codepoint_table();
  return table;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::vector<std::string_view> split_words(std::string_view normalized) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < normalized.size()) {
    std::size_t j = normalized.find(' ', i);
    if (j == std::string_view::npos) j = normalized.size();
    if (j > i) words.push_back(normalized.substr(i, j - i));
    i = j + 1;
  }
  return words;
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
  }
  return out;
}

std::string bytes_to_printable(std::string_view bytes) {
  std::string out;
  for (char c : bytes) append_utf8(out, byte_table()[static_cast<unsigned char>(c)]);
  return out;
}

std::string printable_to_bytes(std::string_view text) {
  static const auto inverse = [] {
    std::map<char32_t, unsigned char> inv;
    for (int b = 0; b < 256; ++b) inv[byte_table()[b]] = static_cast<unsigned char>(b);
    return inv;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c0 = static_cast<unsigned char>(text[i]);
    char32_t cp;
    std::size_t len;
    if (c0 < 0x80) {
      cp = c0;
      len = 1;
    } else if ((c0 & 0xE0) == 0xC0 && i + 1 < text.size()) {
      cp = ((c0 & 0x1F) << 6) | (static_cast<unsigned char>(text[i + 1]) & 0x3F);
      len = 2;
    } else if ((c0 & 0xF0) == 0xE0 && i + 2 < text.size()) {
      cp = ((c0 & 0x0F) << 12) | ((static_cast<unsigned char>(text[i + 1]) & 0x3F) << 6) |
           (static_cast<unsigned char>(text[i + 2]) & 0x3F);
      len = 3;
    } else {
      fail(ErrorCode::kParse, "vocab: invalid UTF-8 in token text");
    }
    auto it = inverse.find(cp);
    require(it != inverse.end(), ErrorCode::kParse, "vocab: code point outside the byte table");
    out.push_back(static_cast<char>(it->second));
    i += len;
  }
  return out;
}

Vocab Vocab::train(std::span<const std::string> corpus, std::size_t target_size, std::uint64_t seed) {
  require(!corpus.empty(), ErrorCode::kEmptyInput, "train_vocab: empty corpus");

  std::map<std::string, std::int64_t> word_counts;
  std::array<bool, 256> seen{};
  for (const std::string& doc : corpus) {
    const std::string norm = normalize_text(doc);
    for (std::string_view w : split_words(norm)) {
      std::string word = " ";
      word.append(w);
      for (char c : word) seen[static_cast<unsigned char>(c)] = true;
      ++word_counts[word];
    }
  }
  require(!word_counts.empty(), ErrorCode::kEmptyInput, "train_vocab: corpus has no words");

  Vocab vocab;
  for (TokenId id = 0; id < special::kCount; ++id) vocab.tokens_.emplace_back(special::name(id));
  for (int b = 0; b < 256; ++b)
    if (seen[b]) vocab.tokens_.emplace_back(1, static_cast<char>(b));
  vocab.alphabet_size_ = vocab.tokens_.size() - special::kCount;
  require(target_size > vocab.tokens_.size(), ErrorCode::kInvalidArgument,
          "train_vocab: target size " + std::to_string(target_size) + " must exceed " +
              std::to_string(vocab.tokens_.size()) + " (specials + base byte symbols)");
  vocab.rebuild_indexes();

  struct Word {
    std::vector<TokenId> symbols;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [text, count] : word_counts) {
    Word w{{}, count};
    for (char c : text) w.symbols.push_back(vocab.byte_id_[static_cast<unsigned char>(c)]);
    words.push_back(std::move(w));
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  while (vocab.tokens_.size() < target_size) {
    pair_counts.clear();
    for (const Word& w : words)
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pair_counts[pair_key(w.symbols[i], w.symbols[i + 1])] += w.count;
    if (pair_counts.empty()) {
      fail(ErrorCode::kInvalidArgument, "train_vocab: corpus supports at most " + std::to_string(vocab.tokens_.size()) +
                                            " tokens, target was " + std::to_string(target_size));
    }
    std::uint64_t best = 0;
    std::int64_t best_count = -1;
    std::uint64_t best_tie = 0;
    for (const auto& [key, count] : pair_counts) {
      const std::uint64_t tie = mix_seed(seed, key);
      if (count > best_count || (count == best_count && (tie < best_tie || (tie == best_tie && key < best)))) {
        best = key;
        best_count = count;
        best_tie = tie;
      }
    }
    const auto left = static_cast<TokenId>(best >> 32);
    const auto right = static_cast<TokenId>(best & 0xffffffffU);
    const std::string merged = vocab.tokens_[left] + vocab.tokens_[right];
    TokenId result;
    if (auto existing = vocab.by_token_.find(merged); existing != vocab.by_token_.end()) {
      result = existing->second;
    } else {
      result = static_cast<TokenId>(vocab.tokens_.size());
      vocab.tokens_.push_back(merged);
      vocab.by_token_.emplace(merged, result);
    }
    vocab.merges_.push_back({left, right, result});
    vocab.merge_rank_[best] = {static_cast<std::uint32_t>(vocab.merges_.size() - 1), result};

    for (Word& w : words) {
      std::vector<TokenId>& s = w.symbols;
      std::size_t out = 0;
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          s[out++] = result;
          i += 2;
        } else {
          s[out++] = s[i++];
        }
      }
      s.resize(out);
    }
  }
  vocab.fingerprint_ = vocab.compute_fingerprint();
  return vocab;
}

void Vocab::rebuild_indexes() {
  by_token_.clear();
  byte_id_.fill(special::kUnk);
  for (std::size_t id = special::kCount; id < tokens_.size(); ++id) {
    by_token_.emplace(tokens_[id], static_cast<TokenId>(id));
    if (id < special::kCount + alphabet_size_) byte_id_[static_cast<unsigned char>(tokens_[id][0])] = static_cast<TokenId>(id);
  }
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const Merge& m = merges_[r];
    merge_rank_.emplace(pair_key(m.left, m.right), std::make_pair(static_cast<std::uint32_t>(r), m.result));
  }
}

std::string Vocab::compute_fingerprint() const {
  Fnv1a64 h;
  h.update(kHeaderTag);
  h.update("\n");
  for (const std::string& t : tokens_) {
    h.update(t);
    h.update("\n");
  }
  h.update("--merges--\n");
  for (const Merge& m : merges_) {
    h.update_u64(static_cast<std::uint64_t>(m.left));
    h.update_u64(static_cast<std::uint64_t>(m.right));
  }
  return to_hex(h.digest());
}

std::optional<TokenId> Vocab::find(std::string_view token_bytes) const {
  if (auto it = by_token_.find(std::string(token_bytes)); it != by_token_.end()) return it->second;
  return std::nullopt;
}

std::vector<TokenId> Vocab::encode_word(std::string_view word) const {
  std::vector<TokenId> s;
  s.reserve(word.size() + 1);
  s.push_back(byte_id_[static_cast<unsigned char>(' ')]);
  for (char c : word) s.push_back(byte_id_[static_cast<unsigned char>(c)]);
  while (s.size() > 1) {
    std::uint32_t best_rank = UINT32_MAX;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (s[i] == special::kUnk || s[i + 1] == special::kUnk) continue;
      auto it = merge_rank_.find(pair_key(s[i], s[i + 1]));
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_at = i;
      }
    }
    if (best_rank == UINT32_MAX) break;
    const TokenId left = s[best_at], right = s[best_at + 1];
    const TokenId result = merges_[best_rank].result;
    std::size_t out = 0;
    for (std::size_t i = 0; i < s.size();) {
      if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
        s[out++] = result;
        i += 2;
      } else {
        s[out++] = s[i++];
      }
    }
    s.resize(out);
  }
  return s;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  const std::string norm = normalize_text(text);
  std::vector<TokenId> ids;
  for (std::string_view w : split_words(norm)) {
    auto piece = encode_word(w);
    ids.insert(ids.end(), piece.begin(), piece.end());
  }
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string raw;
  for (TokenId id : ids) {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorCode::kInvalidArgument,
            "decode: id " + std::to_string(id) + " out of range for vocabulary of " + std::to_string(tokens_.size()));
    if (is_special(id)) {
      raw += ' ';
      raw += special::name(id);
      raw += ' ';
    } else {
      raw += tokens_[static_cast<std::size_t>(id)];
    }
  }
  std::string out;
  bool pending = false;
  for (char c : raw) {
    if (is_space(static_cast<unsigned char>(c))) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

void Vocab::save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const {
  std::ostringstream v;
  v << kHeaderTag << ' ' << tokens_.size() << ' ' << fingerprint_ << '\n';
  for (std::size_t id = 0; id < tokens_.size(); ++id)
    v << (id < static_cast<std::size_t>(special::kCount) ? tokens_[id] : bytes_to_printable(tokens_[id])) << '\n';
  std::ostringstream m;
  for (const Merge& rule : merges_)
    m << bytes_to_printable(tokens_[rule.left]) << ' ' << bytes_to_printable(tokens_[rule.right]) << '\n';
  write_file_atomic(vocab_path, v.str());
  write_file_atomic(merges_path, m.str());
}

Vocab Vocab::load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  const auto lines = read_lines(vocab_path);
  require(!lines.empty(), ErrorCode::kParse, "vocab: empty file " + vocab_path.string());
  std::istringstream header(lines[0]);
  std::string tag, fingerprint;
  std::size_t size = 0;
  header >> tag >> size >> fingerprint;
  require(tag == kHeaderTag, ErrorCode::kVersionMismatch, "vocab: expected header tag vocab-v1, got '" + tag + "'");
  require(lines.size() == size + 1, ErrorCode::kTruncated,
          "vocab: header declares " + std::to_string(size) + " tokens, file has " + std::to_string(lines.size() - 1));

  Vocab vocab;
  for (std::size_t id = 0; id < size; ++id) {
    const std::string& text = lines[id + 1];
    if (id < static_cast<std::size_t>(special::kCount)) {
      require(text == special::name(static_cast<TokenId>(id)), ErrorCode::kParse,
              "vocab: id " + std::to_string(id) + " must be " + std::string(special::name(static_cast<TokenId>(id))));
      vocab.tokens_.push_back(text);
    } else {
      vocab.tokens_.push_back(printable_to_bytes(text));
      require(!vocab.tokens_.back().empty(), ErrorCode::kParse, "vocab: empty token at id " + std::to_string(id));
    }
  }
  std::size_t alphabet = 0;
  while (special::kCount + alphabet < size && vocab.tokens_[special::kCount + alphabet].size() == 1) ++alphabet;
  vocab.alphabet_size_ = alphabet;
  vocab.rebuild_indexes();

  std::vector<bool> produced(size, false);
  for (const std::string& line : read_lines(merges_path)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    require(sp != std::string::npos, ErrorCode::kParse, "merges: malformed rule '" + line + "'");
    const std::string left = printable_to_bytes(line.substr(0, sp));
    const std::string right = printable_to_bytes(line.substr(sp + 1));
    auto l = vocab.find(left), r = vocab.find(right), res = vocab.find(left + right);
    require(l && r && res, ErrorCode::kParse, "merges: rule '" + line + "' references unknown tokens");
    vocab.merges_.push_back({*l, *r, *res});
    produced[static_cast<std::size_t>(*res)] = true;
  }
  for (std::size_t id = special::kCount + alphabet; id < size; ++id)
    require(produced[id], ErrorCode::kParse, "vocab: token id " + std::to_string(id) + " is not produced by any merge");
  vocab.rebuild_indexes();
  vocab.fingerprint_ = vocab.compute_fingerprint();
  require(vocab.fingerprint_ == fingerprint, ErrorCode::kChecksumMismatch,
          "vocab: fingerprint " + vocab.fingerprint_ + " does not match header " + fingerprint);
  return vocab;
}

}  // namespace slab
