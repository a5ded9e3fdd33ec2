#pragma once

#include <cstdint>
#include <vector>

#include "slab/numerics/tape.hpp"

namespace slab {

// Linear layer from the [CLS] vector to L independent sigmoid outputs.
template <class T>
struct MultiLabelHead {
  Parameter<T> weight;  // [HU, L]
  Parameter<T> bias;    // [L]

  // Weight ~ N(0, 0.02) from seed, bias 0.
  MultiLabelHead(std::size_t hidden, std::size_t labels, std::uint64_t seed);

  std::size_t labels() const { return bias.value.size(); }
  std::vector<Parameter<T>*> parameters() { return {&weight, &bias}; }
};

// [batch, L] logits.
template <class T>
Var<T> multilabel_logits(Tape<T>& tape, Var<T> cls, MultiLabelHead<T>& head);

// Sigmoid probabilities for plain [batch, HU] inputs.
template <class T>
Tensor<T> multilabel_scores(const Tensor<T>& cls, const MultiLabelHead<T>& head);

// Per-example sum of label binary cross-entropies, averaged over the batch.
// Throws kShapeMismatch when targets are not [batch, L].
template <class T>
Var<T> multilabel_loss(Var<T> logits, const Tensor<T>& targets);

}  // namespace slab
