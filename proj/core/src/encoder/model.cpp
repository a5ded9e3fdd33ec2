#include "slab/encoder/model.hpp"

#include "slab/error.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

EncoderBatch EncoderBatch::from_pairs(std::span<const EncodedPair> pairs, std::string vocab_fingerprint) {
  EncoderBatch b;
  b.batch = pairs.size();
  b.seq = pairs.empty() ? 0 : pairs[0].length();
  b.vocab_fingerprint = std::move(vocab_fingerprint);
  for (const EncodedPair& p : pairs) {
    require(p.length() == b.seq, ErrorCode::kShapeMismatch,
            "batch: sequences framed to different lengths (" + std::to_string(p.length()) + " vs " +
                std::to_string(b.seq) + ")");
    b.ids.insert(b.ids.end(), p.ids.begin(), p.ids.end());
    b.segments.insert(b.segments.end(), p.segments.begin(), p.segments.end());
    b.mask.insert(b.mask.end(), p.attention_mask.begin(), p.attention_mask.end());
  }
  return b;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <class T>
Encoder<T>::Encoder(EncoderConfig config, std::uint64_t seed, Init init) : config_(std::move(config)) {
  validate(config_);
  const std::size_t V = config_.vocab_size, P = config_.max_positions, H = config_.hidden, I = config_.intermediate;
  add("embeddings.token", {V, H});
  add("embeddings.position", {P, H});
  add("embeddings.segment", {2, H});
  add("embeddings.ln.gain", {H});
  add("embeddings.ln.bias", {H});
  const std::size_t stored_layers = config_.shared_layers ? 1 : config_.layers;
  for (std::size_t l = 0; l < stored_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      add(p + "attn." + proj + ".weight", {H, H});
      add(p + "attn." + proj + ".bias", {H});
    }
    add(p + "attn.ln.gain", {H});
    add(p + "attn.ln.bias", {H});
    add(p + "ffn.in.weight", {H, I});
    add(p + "ffn.in.bias", {I});
    add(p + "ffn.out.weight", {I, H});
    add(p + "ffn.out.bias", {H});
    add(p + "ffn.ln.gain", {H});
    add(p + "ffn.ln.bias", {H});
  }
  add("mlm.transform.weight", {H, H});
  add("mlm.transform.bias", {H});
  add("mlm.ln.gain", {H});
  add("mlm.ln.bias", {H});
  add("mlm.bias", {V});
  add("nsp.pooler.weight", {H, H});
  add("nsp.pooler.bias", {H});
  add("nsp.classifier.weight", {H, 2});
  add("nsp.classifier.bias", {2});

  Rng rng(seed);
  for (auto& p : params_) {
    if (ends_with(p->name, ".gain")) {
      p->value.fill(T{1});
    } else if (ends_with(p->name, "bias")) {
      p->value.fill(T{0});
    } else if (init == Init::kRandom) {
      for (T& v : p->value.data()) v = static_cast<T>(rng.normal(0.0, kInitStddev));
    }
  }
}

template <class T>
void Encoder<T>::set_dropout(double rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument, "dropout must be in [0, 1)");
  config_.dropout = rate;
}

template <class T>
Encoder<T>::Encoder(const Encoder& other) : config_(other.config_), vocab_fingerprint_(other.vocab_fingerprint_) {
  for (const auto& p : other.params_) {
    params_.push_back(std::make_unique<Parameter<T>>(*p));
    index_.emplace(p->name, params_.size() - 1);
  }
}

template <class T>
Encoder<T>& Encoder<T>::operator=(const Encoder& other) {
  if (this != &other) {
    Encoder copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <class T>
template <class U>
Encoder<U> Encoder<T>::cast() const {
  Encoder<U> out;
  out.config_ = config_;
  out.vocab_fingerprint_ = vocab_fingerprint_;
  for (const auto& p : params_) {
    auto q = std::make_unique<Parameter<U>>(p->name, p->value.template cast<U>());
    q->requires_grad = p->requires_grad;
    out.index_.emplace(p->name, out.params_.size());
    out.params_.push_back(std::move(q));
  }
  return out;
}

template <class T>
void Encoder<T>::add(const std::string& name, Shape shape) {
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter<T>>(name, Tensor<T>(std::move(shape))));
}

template <class T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<const Parameter<T>*> Encoder<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
Parameter<T>& Encoder<T>::param(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::kInvalidArgument, "encoder: no parameter named '" + name + "'");
  return *params_[it->second];
}

template <class T>
const Parameter<T>& Encoder<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::kInvalidArgument, "encoder: no parameter named '" + name + "'");
  return *params_[it->second];
}

template <class T>
std::size_t Encoder<T>::allocated_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void Encoder<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <class T>
std::string Encoder<T>::layer_prefix(std::size_t layer) const {
  return "layer." + std::to_string(config_.shared_layers ? 0 : layer) + ".";
}

template <class T>
Var<T> Encoder<T>::dense(Tape<T>& tape, Var<T> x, const std::string& prefix) {
  return add_bias(matmul(x, tape.param(param(prefix + ".weight"))), tape.param(param(prefix + ".bias")));
}

template <class T>
Var<T> Encoder<T>::norm(Tape<T>& tape, Var<T> x, const std::string& prefix) {
  return layer_norm(x, tape.param(param(prefix + ".gain")), tape.param(param(prefix + ".bias")), kLayerNormEps);
}

template <class T>
EncoderOutput<T> Encoder<T>::forward(Tape<T>& tape, const EncoderBatch& batch, const ForwardOptions& options,
                                     std::vector<Tensor<T>>* attention_probs) {
  const std::size_t B = batch.batch, S = batch.seq, N = B * S;
  require(batch.vocab_fingerprint.empty() || vocab_fingerprint_.empty() ||
              batch.vocab_fingerprint == vocab_fingerprint_,
          ErrorCode::kFingerprintMismatch,
          "vocabulary fingerprint mismatch: batch encoded with " + batch.vocab_fingerprint + ", model expects " +
              vocab_fingerprint_);
  require(batch.ids.size() == N && batch.segments.size() == N && batch.mask.size() == N, ErrorCode::kShapeMismatch,
          "forward: batch arrays must hold batch*seq entries");
  require(S <= config_.max_positions, ErrorCode::kInvalidArgument,
          "forward: sequence length " + std::to_string(S) + " exceeds max_positions " +
              std::to_string(config_.max_positions));
  for (std::int32_t s : batch.segments)
    require(s == 0 || s == 1, ErrorCode::kInvalidArgument, "forward: segment ids must be 0 or 1");

  const double rate = options.train ? config_.dropout : 0.0;
  std::uint64_t site = 0;
  auto drop = [&](Var<T> x) { return dropout(x, rate, mix_seed(options.dropout_seed, site++)); };

  std::vector<std::int32_t> positions(N);
  for (std::size_t i = 0; i < N; ++i) positions[i] = static_cast<std::int32_t>(i % S);
  Var<T> x = embedding(tape.param(param("embeddings.token")), std::span<const std::int32_t>(batch.ids));
  x = slab::add(x, embedding(tape.param(param("embeddings.position")), std::span<const std::int32_t>(positions)));
  x = slab::add(x, embedding(tape.param(param("embeddings.segment")), std::span<const std::int32_t>(batch.segments)));
  x = drop(norm(tape, x, "embeddings.ln"));

  if (attention_probs) attention_probs->clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = layer_prefix(l);
    Var<T> q = dense(tape, x, p + "attn.q");
    Var<T> k = dense(tape, x, p + "attn.k");
    Var<T> v = dense(tape, x, p + "attn.v");
    AttentionSpec spec{B, S, config_.heads, rate, mix_seed(options.dropout_seed, site++)};
    Tensor<T> probs;
    Var<T> ctx = attention(q, k, v, std::span<const std::uint8_t>(batch.mask), spec, attention_probs ? &probs : nullptr);
    if (attention_probs) attention_probs->push_back(std::move(probs));
    Var<T> attn_out = drop(dense(tape, ctx, p + "attn.o"));
    x = norm(tape, slab::add(x, attn_out), p + "attn.ln");
    Var<T> h = gelu(dense(tape, x, p + "ffn.in"));
    Var<T> ffn_out = drop(dense(tape, h, p + "ffn.out"));
    x = norm(tape, slab::add(x, ffn_out), p + "ffn.ln");
  }

  std::vector<std::size_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * S;
  return {x, gather_rows(x, std::span<const std::size_t>(cls_rows))};
}

template <class T>
Var<T> Encoder<T>::mlm_logits(Tape<T>& tape, Var<T> hidden, std::span<const std::size_t> positions) {
  const std::size_t rows = hidden.value().rows();
  for (std::size_t p : positions)
    require(p < rows, ErrorCode::kInvalidArgument,
            "mlm_logits: position " + std::to_string(p) + " out of range for " + std::to_string(rows) + " tokens");
  Var<T> h = gather_rows(hidden, positions);
  h = norm(tape, gelu(dense(tape, h, "mlm.transform")), "mlm.ln");
  return add_bias(matmul_nt(h, tape.param(param("embeddings.token"))), tape.param(param("mlm.bias")));
}

template <class T>
Var<T> Encoder<T>::nsp_logits(Tape<T>& tape, Var<T> cls) {
  Var<T> pooled = slab::tanh(dense(tape, cls, "nsp.pooler"));
  return dense(tape, pooled, "nsp.classifier");
}

template class Encoder<float>;
template class Encoder<double>;
template Encoder<double> Encoder<float>::cast<double>() const;
template Encoder<float> Encoder<double>::cast<float>() const;
template Encoder<float> Encoder<float>::cast<float>() const;

}  // namespace slab
