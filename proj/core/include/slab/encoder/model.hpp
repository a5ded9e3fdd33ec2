#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "slab/encoder/config.hpp"
#include "slab/numerics/tape.hpp"
#include "slab/tokenizer/framing.hpp"

namespace slab {

// A batch of framed sequences, all of the same length, laid out row-major.
struct EncoderBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;
  std::vector<std::int32_t> segments;
  std::vector<std::uint8_t> mask;
  // Fingerprint of the vocabulary that produced ids; empty skips the check.
  std::string vocab_fingerprint;

  static EncoderBatch from_pairs(std::span<const EncodedPair> pairs, std::string vocab_fingerprint = {});
};

struct ForwardOptions {
  bool train = false;  // dropout active
  std::uint64_t dropout_seed = 0;
};

template <class T>
struct EncoderOutput {
  Var<T> hidden;  // [batch * seq, HU]
  Var<T> cls;     // [batch, HU]
};

// BERT-style encoder with tied-decoder MLM head and NSP head. Parameter names:
//   embeddings.{token,position,segment}, embeddings.ln.{gain,bias}
//   layer.<i>.attn.{q,k,v,o}.{weight,bias}, layer.<i>.attn.ln.{gain,bias}
//   layer.<i>.ffn.{in,out}.{weight,bias}, layer.<i>.ffn.ln.{gain,bias}
//   mlm.transform.{weight,bias}, mlm.ln.{gain,bias}, mlm.bias
//   nsp.pooler.{weight,bias}, nsp.classifier.{weight,bias}
// Dense weights are stored [in, out]. With shared_layers only layer.0 exists.
template <class T>
class Encoder {
 public:
  enum class Init { kRandom, kConstant };

  // Weights ~ N(0, 0.02), biases 0, LayerNorm gains 1; drawn in canonical order
  // from `seed`. kConstant leaves weights at zero (shape-only uses such as
  // parameter accounting and throughput timing).
  Encoder(EncoderConfig config, std::uint64_t seed, Init init = Init::kRandom);

  Encoder(const Encoder& other);
  Encoder& operator=(const Encoder& other);
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;

  // Element-wise conversion, e.g. to double for gradient checks.
  template <class U>
  Encoder<U> cast() const;

  const EncoderConfig& config() const { return config_; }
  const std::string& vocab_fingerprint() const { return vocab_fingerprint_; }
  void set_vocab_fingerprint(std::string fp) { vocab_fingerprint_ = std::move(fp); }
  // Throws kInvalidArgument outside [0, 1).
  void set_dropout(double rate);

  // Canonical order: embeddings, layers, mlm, nsp.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  Parameter<T>& param(const std::string& name);
  const Parameter<T>& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t allocated_elements() const;
  void zero_grad();

  // Throws kFingerprintMismatch when the batch names a different vocabulary.
  EncoderOutput<T> forward(Tape<T>& tape, const EncoderBatch& batch, const ForwardOptions& options = {},
                           std::vector<Tensor<T>>* attention_probs = nullptr);

  // positions index rows of hidden (b * seq + s); result [positions, V].
  Var<T> mlm_logits(Tape<T>& tape, Var<T> hidden, std::span<const std::size_t> positions);
  // [batch, 2]
  Var<T> nsp_logits(Tape<T>& tape, Var<T> cls);

 private:
  template <class U>
  friend class Encoder;
  Encoder() = default;

  void add(const std::string& name, Shape shape);
  Var<T> dense(Tape<T>& tape, Var<T> x, const std::string& prefix);
  Var<T> norm(Tape<T>& tape, Var<T> x, const std::string& prefix);
  std::string layer_prefix(std::size_t layer) const;

  EncoderConfig config_;
  std::string vocab_fingerprint_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kInitStddev = 0.02;

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace slab
