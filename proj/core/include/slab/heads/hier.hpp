#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slab/encoder/model.hpp"
#include "slab/numerics/tape.hpp"

namespace slab {

// Attention pooling over fact embeddings h_1..h_N:
//   u_i = tanh(W h_i + b),  alpha = softmax_i(u_i . c),  d = sum_i alpha_i h_i
template <class T>
struct HierPooler {
  Parameter<T> weight;   // [HU, HU]
  Parameter<T> bias;     // [HU]
  Parameter<T> context;  // [HU]

  HierPooler(std::size_t hidden, std::uint64_t seed);

  std::vector<Parameter<T>*> parameters() { return {&weight, &bias, &context}; }
};

template <class T>
struct HierPoolOutput {
  Var<T> document;  // [1, HU]
  Var<T> alpha;     // [1, N]
};

// facts: [N, HU]. Throws kEmptyInput when N = 0.
template <class T>
HierPoolOutput<T> hier_pool(Tape<T>& tape, Var<T> facts, HierPooler<T>& pooler);

// Encodes every fact independently ([CLS] of each framed fact) and pools them.
// Throws kEmptyInput for no facts, kInvalidArgument above max_facts.
template <class T>
HierPoolOutput<T> hier_encode(Tape<T>& tape, Encoder<T>& encoder, std::span<const EncodedPair> facts,
                              HierPooler<T>& pooler, std::size_t max_facts, const ForwardOptions& options = {});

}  // namespace slab
