#include "slab/heads/hier.hpp"

#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

template <class T>
HierPooler<T>::HierPooler(std::size_t hidden, std::uint64_t seed)
    : weight("pooler.weight", Tensor<T>({hidden, hidden})),
      bias("pooler.bias", Tensor<T>({hidden})),
      context("pooler.context", Tensor<T>({hidden, 1})) {
  require(hidden >= 1, ErrorCode::kInvalidArgument, "hierarchical pooler needs HU >= 1");
  Rng rng(seed);
  for (auto& w : weight.value.data()) w = static_cast<T>(rng.normal(0.0, kInitStddev));
  for (auto& w : context.value.data()) w = static_cast<T>(rng.normal(0.0, kInitStddev));
}

template <class T>
HierPoolOutput<T> hier_pool(Tape<T>& tape, Var<T> facts, HierPooler<T>& pooler) {
  const std::size_t n = facts.value().rows();
  require(n >= 1, ErrorCode::kEmptyInput, "hier_pool: a document needs at least one fact");
  Var<T> u = slab::tanh(add_bias(matmul(facts, tape.param(pooler.weight)), tape.param(pooler.bias)));
  Var<T> scores = reshape(matmul(u, tape.param(pooler.context)), Shape{1, n});
  Var<T> alpha = softmax(scores, 1);
  return {matmul(alpha, facts), alpha};
}

template <class T>
HierPoolOutput<T> hier_encode(Tape<T>& tape, Encoder<T>& encoder, std::span<const EncodedPair> facts,
                              HierPooler<T>& pooler, std::size_t max_facts, const ForwardOptions& options) {
  require(!facts.empty(), ErrorCode::kEmptyInput, "hier_encode: a document needs at least one fact");
  require(facts.size() <= max_facts, ErrorCode::kInvalidArgument,
          "hier_encode: " + std::to_string(facts.size()) + " facts exceed the limit of " + std::to_string(max_facts));
  const EncoderBatch batch = EncoderBatch::from_pairs(facts, encoder.vocab_fingerprint());
  return hier_pool(tape, encoder.forward(tape, batch, options).cls, pooler);
}

#define SLAB_INSTANTIATE_HIER(T)                                                                  \
  template struct HierPooler<T>;                                                                  \
  template HierPoolOutput<T> hier_pool<T>(Tape<T>&, Var<T>, HierPooler<T>&);                      \
  template HierPoolOutput<T> hier_encode<T>(Tape<T>&, Encoder<T>&, std::span<const EncodedPair>, \
                                            HierPooler<T>&, std::size_t, const ForwardOptions&);

SLAB_INSTANTIATE_HIER(float)
SLAB_INSTANTIATE_HIER(double)

}  // namespace slab
