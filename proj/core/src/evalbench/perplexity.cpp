#include "slab/evalbench/perplexity.hpp"

#include <cmath>

#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/pretrain/examples.hpp"

namespace slab {

double pseudo_perplexity(const MaskedScorer& scorer, std::span<const std::vector<TokenId>> texts,
                         std::size_t vocab_size, std::size_t max_len, const PerplexityOptions& options) {
  require(options.rounds >= 1, ErrorCode::kInvalidArgument, "pseudo_perplexity: rounds must be >= 1");
  require(max_len >= 3, ErrorCode::kInvalidArgument, "pseudo_perplexity: max_len must be >= 3");
  std::vector<EncodedPair> chunks;
  const std::size_t width = max_len - 2;
  for (const auto& ids : texts)
    for (std::size_t at = 0; at < ids.size(); at += width) {
      const auto piece = std::span<const TokenId>(ids).subspan(at, std::min(width, ids.size() - at));
      chunks.push_back(frame_pair(piece, std::nullopt, piece.size() + 2));
    }

  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t round = 0; round < options.rounds; ++round) {
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const MaskResult m = mask_tokens(chunks[c].ids, options.mask_rate, mix_seed(options.seed, round, c), vocab_size);
      EncodedPair corrupted = chunks[c];
      std::vector<std::size_t> positions;
      std::vector<TokenId> targets;
      for (std::size_t i = 0; i < m.labels.size(); ++i) {
        if (m.labels[i] == kNoLabel) continue;
        positions.push_back(i);
        targets.push_back(m.labels[i]);
        corrupted.ids[i] = special::kMask;
      }
      if (positions.empty()) continue;
      for (double lp : scorer(corrupted, positions, targets)) nll -= lp;
      count += positions.size();
    }
  }
  require(count > 0, ErrorCode::kEmptyInput, "pseudo_perplexity: no maskable positions in the texts");
  return std::exp(nll / static_cast<double>(count));
}

MaskedScorer encoder_scorer(Encoder<float>& encoder) {
  return [&model = encoder](const EncodedPair& corrupted, std::span<const std::size_t> positions,
                           std::span<const TokenId> targets) {
    Tape<float> tape;
    const auto batch = EncoderBatch::from_pairs(std::span<const EncodedPair>(&corrupted, 1));
    const auto out = model.forward(tape, batch);
    const Tensor<float> logp = log_softmax_rows(model.mlm_logits(tape, out.hidden, positions).value());
    std::vector<double> result(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
      result[i] = logp.at(i, static_cast<std::size_t>(targets[i]));
    return result;
  };
}

double pseudo_perplexity(Encoder<float>& encoder, const Vocab& vocab, std::span<const std::string> texts,
                         const PerplexityOptions& options) {
  require(encoder.vocab_fingerprint().empty() || encoder.vocab_fingerprint() == vocab.fingerprint(),
          ErrorCode::kFingerprintMismatch,
          "pseudo_perplexity: checkpoint vocabulary " + encoder.vocab_fingerprint() + " does not match " +
              vocab.fingerprint());
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(texts.size());
  for (const auto& t : texts) ids.push_back(vocab.encode(t));
  const std::size_t max_len = options.max_len ? options.max_len : encoder.config().max_positions;
  return pseudo_perplexity(encoder_scorer(encoder), ids, encoder.config().vocab_size, max_len, options);
}

}  // namespace slab
