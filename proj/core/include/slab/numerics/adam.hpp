#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slab/numerics/tape.hpp"
#include "slab/numerics/tensor.hpp"

namespace slab {

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
};

// First/second moments per parameter, zero-initialized on first use.
template <class T>
struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// No weight decay. The step counter advances by exactly one per call.
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state);

// Convenience overload over Parameter objects; frozen parameters keep their
// moment slots but are not updated.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state);

}  // namespace slab
