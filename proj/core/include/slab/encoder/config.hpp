#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace slab {

struct EncoderConfig {
  std::string preset = "custom";
  std::size_t layers = 2;        // T
  std::size_t hidden = 64;       // HU
  std::size_t heads = 2;         // AH
  std::size_t intermediate = 256;
  std::size_t vocab_size = 512;
  std::size_t max_positions = 64;
  double dropout = 0.1;
  // One set of layer weights reused by every layer. Only the bench shapes
  // that stand for weight-shared models turn this on.
  bool shared_layers = false;

  bool operator==(const EncoderConfig&) const = default;
};

// Throws kInvalidArgument naming the offending field.
void validate(const EncoderConfig& config);

// base, small, tiny, and the bench shapes base-shape, small-shape,
// distil-shape, albert-shape, albert-large-shape. vocab_size 0 keeps the
// preset's own size (30000, or 512 for tiny).
EncoderConfig preset_config(std::string_view name, std::size_t vocab_size = 0);
std::vector<std::string> preset_names();

// Closed form, checked against the allocated tensors:
//   embeddings  V*H + P*H + 2*H + 2*H                      (token, position, segment, LayerNorm)
//   per layer   4*(H*H + H) + 2*H                          (q, k, v, o projections, LayerNorm)
//             + (H*I + I) + (I*H + H) + 2*H                (feed-forward in/out, LayerNorm)
//   MLM head    H*H + H + 2*H + V                          (transform, LayerNorm, output bias; decoder tied)
//   NSP head    H*H + H + 2*H + 2                          (pooler, classifier)
// Layers contribute once when shared_layers is set, T times otherwise.
std::size_t count_parameters(const EncoderConfig& config);

}  // namespace slab
