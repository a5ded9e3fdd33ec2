#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slab/numerics/tape.hpp"
#include "slab/numerics/tensor.hpp"

namespace slab {

// ---- plain (untaped) forms -------------------------------------------------

// Numerically stable softmax along `axis`. Throws kNonFinite on NaN/inf input.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits, std::size_t axis);

// Normalizes over the last axis. Throws on an empty last axis or epsilon <= 0.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double epsilon);

// log-softmax of each row of a [rows, cols] tensor.
template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits);

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluCoeff = 0.044715;
inline constexpr double kSqrt2OverPi = 0.7978845608028654;

template <class T>
T gelu_scalar(T x);

// ---- taped ops ------------------------------------------------------------

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, double factor);
// x[..., m] + bias[m], broadcast over rows.
template <class T> Var<T> add_bias(Var<T> x, Var<T> bias);
// a[n,k] x b[k,m]; `a` may have any rank, its last axis is k.
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// a[n,k] x b[m,k]^T
template <class T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <class T> Var<T> gelu(Var<T> x);
template <class T> Var<T> tanh(Var<T> x);
template <class T> Var<T> sigmoid(Var<T> x);
template <class T> Var<T> softmax(Var<T> x, std::size_t axis);
template <class T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double epsilon);
// Inverted dropout; the keep mask is drawn from `seed` alone. rate 0 is identity.
template <class T> Var<T> dropout(Var<T> x, double rate, std::uint64_t seed);
template <class T> Var<T> reshape(Var<T> x, Shape shape);
template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> mean(Var<T> x);
// Rows of table[V, H] selected by ids -> [ids.size(), H].
template <class T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);
template <class T> Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows);

// Multi-head scaled dot-product self-attention over a batch.
//   q, k, v: [batch * seq, hidden];  key_mask: batch * seq entries, 1 = attend.
// Masked keys receive exactly zero probability. When probs_out is non-null it
// receives the pre-dropout attention probabilities, [batch, heads, seq, seq].
struct AttentionSpec {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 1;
  double dropout = 0.0;
  std::uint64_t seed = 0;
};
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_mask,
                 const AttentionSpec& spec, Tensor<T>* probs_out = nullptr);

// Mean over rows of -log softmax(logits)[target]. logits: [n, classes].
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets);

// Mean over rows of the per-row sum of binary cross-entropies with logits.
// targets has the logits' shape and holds 0/1.
template <class T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets);

}  // namespace slab
