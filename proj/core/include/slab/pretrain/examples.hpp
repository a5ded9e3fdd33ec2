#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slab/pretrain/corpus.hpp"
#include "slab/tokenizer/framing.hpp"
#include "slab/tokenizer/vocab.hpp"

namespace slab {

inline constexpr std::int32_t kNoLabel = -1;
inline constexpr double kDefaultMaskRate = 0.15;

enum class MaskAction { kMask, kRandom, kKeep };

struct MaskResult {
  std::vector<TokenId> ids;
  std::vector<std::int32_t> labels;  // original id at selected positions, kNoLabel elsewhere
  std::vector<MaskAction> actions;   // one per selected position, in position order
  std::size_t selected() const { return actions.size(); }
};

// Candidates are the non-special positions. Exactly
//   n = min(candidates, max(1, round(rate * real_tokens)))
// of them are chosen uniformly without replacement (n = 0 when rate is 0),
// where real_tokens counts non-PAD positions; so every candidate is chosen
// with the same probability and 1 <= n <= ceil(rate * real_tokens) whenever a
// candidate exists. Chosen positions become MASK / a uniform random
// non-special id / unchanged with probabilities 0.8 / 0.1 / 0.1, assigned by
// systematic sampling over the shuffled selection so the three counts stay
// within one of their expectations.
MaskResult mask_tokens(std::span<const TokenId> ids, double rate, std::uint64_t seed, std::size_t vocab_size);

struct TrainingExample {
  EncodedPair pair;
  std::vector<std::int32_t> labels;  // per position, kNoLabel where not masked
  std::int32_t nsp_label = 0;        // 0 is-next, 1 not-next
  bool operator==(const TrainingExample& o) const {
    return pair.ids == o.pair.ids && pair.segments == o.pair.segments && pair.attention_mask == o.pair.attention_mask &&
           labels == o.labels && nsp_label == o.nsp_label;
  }
};

inline constexpr std::int32_t kIsNext = 0;
inline constexpr std::int32_t kNotNext = 1;

// Documents split into sentences (on . ! ?), each sentence encoded.
struct TokenizedDocument {
  std::vector<std::vector<TokenId>> sentences;
};
std::vector<TokenizedDocument> tokenize_documents(std::span<const Document> docs, const Vocab& vocab);
std::vector<std::string> split_sentences(std::string_view text);

struct ExampleOptions {
  std::size_t seq_len = kMaxSequenceLength;
  bool nsp = true;
  double mask_rate = kDefaultMaskRate;
  std::size_t dupe_factor = 10;
  std::size_t vocab_size = 0;
  std::uint64_t seed = 0;
};

// One epoch of examples: dupe_factor passes over the corpus, each pass with
// fresh segment pairing and masking, then shuffled. Sentences are packed into
// chunks of up to seq_len - 3 tokens (seq_len - 2 without NSP); with NSP a
// chunk is cut at a random sentence boundary into a and b, and with
// probability 0.5 b is replaced by text from a different document (not-next).
// Examples without any maskable token are skipped. Deterministic per
// (seed, epoch). Throws kInvalidArgument for NSP over fewer than 2 documents.
std::vector<TrainingExample> build_examples(std::span<const TokenizedDocument> docs, const ExampleOptions& options,
                                            std::uint64_t epoch);

}  // namespace slab
