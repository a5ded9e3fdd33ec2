#include "slab/pretrain/examples.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slab/error.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

MaskResult mask_tokens(std::span<const TokenId> ids, double rate, std::uint64_t seed, std::size_t vocab_size) {
  require(rate >= 0.0 && rate <= 1.0, ErrorCode::kInvalidArgument, "mask_tokens: rate must be in [0, 1]");
  MaskResult out{std::vector<TokenId>(ids.begin(), ids.end()), std::vector<std::int32_t>(ids.size(), kNoLabel), {}};
  std::vector<std::size_t> candidates;
  std::size_t real = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != special::kPad) ++real;
    if (!Vocab::is_special(ids[i])) candidates.push_back(i);
  }
  if (rate == 0.0 || candidates.empty()) return out;
  require(vocab_size > static_cast<std::size_t>(special::kCount), ErrorCode::kInvalidArgument,
          "mask_tokens: vocabulary has no non-special tokens");

  const auto wanted = static_cast<std::size_t>(std::llround(rate * static_cast<double>(real)));
  const std::size_t n = std::min(candidates.size(), std::max<std::size_t>(1, wanted));
  Rng rng(seed);
  rng.shuffle(std::span(candidates));
  const double offset = rng.uniform();
  std::vector<std::pair<std::size_t, MaskAction>> chosen;
  for (std::size_t k = 0; k < n; ++k) {
    const double u = (static_cast<double>(k) + offset) / static_cast<double>(n);
    const MaskAction a = u < 0.8 ? MaskAction::kMask : (u < 0.9 ? MaskAction::kRandom : MaskAction::kKeep);
    chosen.emplace_back(candidates[k], a);
  }
  std::sort(chosen.begin(), chosen.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (const auto& [pos, action] : chosen) {
    out.labels[pos] = ids[pos];
    if (action == MaskAction::kMask)
      out.ids[pos] = special::kMask;
    else if (action == MaskAction::kRandom)
      out.ids[pos] = static_cast<TokenId>(rng.uniform_int(special::kCount, static_cast<std::int64_t>(vocab_size) - 1));
    out.actions.push_back(action);
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      if (cur.find_first_not_of(' ') != std::string::npos) out.push_back(cur);
      cur.clear();
    }
  }
  if (cur.find_first_not_of(' ') != std::string::npos) out.push_back(cur);
  return out;
}

std::vector<TokenizedDocument> tokenize_documents(std::span<const Document> docs, const Vocab& vocab) {
  std::vector<TokenizedDocument> out;
  out.reserve(docs.size());
  for (const Document& d : docs) {
    TokenizedDocument td;
    for (const std::string& s : split_sentences(d.text)) {
      auto ids = vocab.encode(s);
      if (!ids.empty()) td.sentences.push_back(std::move(ids));
    }
    out.push_back(std::move(td));
  }
  return out;
}

namespace {

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

std::vector<TrainingExample> build_examples(std::span<const TokenizedDocument> docs, const ExampleOptions& options,
                                            std::uint64_t epoch) {
  require(options.seq_len >= (options.nsp ? 5u : 4u), ErrorCode::kInvalidArgument,
          "build_examples: seq_len too small");
  require(options.dupe_factor >= 1, ErrorCode::kInvalidArgument, "build_examples: dupe_factor must be positive");
  std::size_t non_empty = 0;
  for (const auto& d : docs) non_empty += !d.sentences.empty();
  require(non_empty >= 1, ErrorCode::kEmptyInput, "build_examples: no document contains text");
  require(!options.nsp || non_empty >= 2, ErrorCode::kInvalidArgument,
          "build_examples: next-segment prediction needs at least 2 documents; disable NSP for a single-document store");

  const std::size_t target = options.seq_len - (options.nsp ? 3 : 2);
  std::vector<TrainingExample> out;
  for (std::size_t dupe = 0; dupe < options.dupe_factor; ++dupe) {
    Rng rng(mix_seed(options.seed, 0x65, epoch, dupe));
    for (std::size_t di = 0; di < docs.size(); ++di) {
      const auto& sentences = docs[di].sentences;
      std::vector<const std::vector<TokenId>*> chunk;
      std::size_t chunk_len = 0;
      for (std::size_t si = 0; si < sentences.size(); ++si) {
        chunk.push_back(&sentences[si]);
        chunk_len += sentences[si].size();
        if (si + 1 != sentences.size() && chunk_len < target) continue;

        std::vector<TokenId> a, b;
        std::int32_t label = kIsNext;
        if (!options.nsp) {
          for (auto* s : chunk) append(a, *s);
        } else {
          const std::size_t a_end = chunk.size() >= 2 ? 1 + rng.uniform_int(chunk.size() - 1) : 1;
          for (std::size_t k = 0; k < a_end; ++k) append(a, *chunk[k]);
          if (chunk.size() == 1 || rng.bernoulli(0.5)) {
            label = kNotNext;
            std::size_t other = di;
            while (other == di || docs[other].sentences.empty()) other = rng.uniform_int(docs.size());
            const auto& os = docs[other].sentences;
            const std::size_t budget = target > a.size() ? target - a.size() : 1;
            for (std::size_t k = rng.uniform_int(os.size()); k < os.size() && b.size() < budget; ++k) append(b, os[k]);
            // The unused tail of this chunk is not lost: resume after a.
            si -= chunk.size() - a_end;
          } else {
            for (std::size_t k = a_end; k < chunk.size(); ++k) append(b, *chunk[k]);
          }
        }
        chunk.clear();
        chunk_len = 0;

        truncate_pair(a, b, target);
        TrainingExample ex;
        ex.pair = options.nsp ? frame_pair(a, std::span<const TokenId>(b), options.seq_len)
                              : frame_pair(a, std::nullopt, options.seq_len);
        ex.nsp_label = label;
        MaskResult m = mask_tokens(ex.pair.ids, options.mask_rate, rng.next_u64(), options.vocab_size);
        if (options.mask_rate > 0.0 && m.selected() == 0) continue;
        ex.pair.ids = std::move(m.ids);
        ex.labels = std::move(m.labels);
        out.push_back(std::move(ex));
      }
    }
  }
  Rng order(mix_seed(options.seed, 0x5f, epoch));
  order.shuffle(std::span(out));
  return out;
}

}  // namespace slab
