#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slab/encoder/model.hpp"
#include "slab/tokenizer/vocab.hpp"

namespace slab {

// Natural-log probabilities of `targets` at `positions` of a corrupted
// sequence.
using MaskedScorer = std::function<std::vector<double>(const EncodedPair& corrupted, std::span<const std::size_t> positions,
                                                       std::span<const TokenId> targets)>;

struct PerplexityOptions {
  std::size_t rounds = 5;
  std::uint64_t seed = 0;
  double mask_rate = 0.15;
  // Texts are cut into chunks of max_len - 2 tokens; 0 means the encoder's
  // max_positions.
  std::size_t max_len = 0;
};

// Every round draws a fresh seeded selection per chunk (mask_tokens with
// mix_seed(seed, round, chunk)), replaces every selected token with [MASK] and
// scores the originals. PPL = exp(mean NLL). Throws kEmptyInput when no
// position is ever masked.
double pseudo_perplexity(const MaskedScorer& scorer, std::span<const std::vector<TokenId>> texts,
                         std::size_t vocab_size, std::size_t max_len, const PerplexityOptions& options);

MaskedScorer encoder_scorer(Encoder<float>& encoder);

// Encodes texts with `vocab`; kFingerprintMismatch when the encoder was
// trained with another vocabulary.
double pseudo_perplexity(Encoder<float>& encoder, const Vocab& vocab, std::span<const std::string> texts,
                         const PerplexityOptions& options = {});

}  // namespace slab
