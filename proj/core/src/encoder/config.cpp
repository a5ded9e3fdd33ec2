#include "slab/encoder/config.hpp"

#include "slab/error.hpp"

namespace slab {

void validate(const EncoderConfig& c) {
  require(c.layers > 0, ErrorCode::kInvalidArgument, "encoder config: layers must be positive");
  require(c.hidden > 0, ErrorCode::kInvalidArgument, "encoder config: hidden must be positive");
  require(c.heads > 0, ErrorCode::kInvalidArgument, "encoder config: heads must be positive");
  require(c.hidden % c.heads == 0, ErrorCode::kInvalidArgument,
          "encoder config: hidden " + std::to_string(c.hidden) + " not divisible by heads " + std::to_string(c.heads));
  require(c.intermediate > 0, ErrorCode::kInvalidArgument, "encoder config: intermediate must be positive");
  require(c.vocab_size > 5, ErrorCode::kInvalidArgument, "encoder config: vocab_size must exceed the 5 special tokens");
  require(c.max_positions >= 3, ErrorCode::kInvalidArgument, "encoder config: max_positions must be at least 3");
  require(c.dropout >= 0.0 && c.dropout < 1.0, ErrorCode::kInvalidArgument, "encoder config: dropout must be in [0, 1)");
}

namespace {

EncoderConfig make(std::string name, std::size_t t, std::size_t hu, std::size_t ah, std::size_t v, std::size_t p,
                   bool shared = false) {
  EncoderConfig c;
  c.preset = std::move(name);
  c.layers = t;
  c.hidden = hu;
  c.heads = ah;
  c.intermediate = 4 * hu;
  c.vocab_size = v;
  c.max_positions = p;
  c.shared_layers = shared;
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"base", "small", "tiny", "base-shape", "small-shape", "distil-shape", "albert-shape", "albert-large-shape"};
}

EncoderConfig preset_config(std::string_view name, std::size_t vocab_size) {
  const std::size_t v = vocab_size ? vocab_size : (name == "tiny" ? 512 : 30000);
  EncoderConfig c;
  if (name == "base") c = make("base", 12, 768, 12, v, 512);
  else if (name == "small") c = make("small", 6, 512, 8, v, 512);
  else if (name == "tiny") c = make("tiny", 2, 64, 2, v, 64);
  else if (name == "base-shape") c = make("base-shape", 12, 768, 12, v, 512);
  else if (name == "small-shape") c = make("small-shape", 6, 512, 8, v, 512);
  else if (name == "distil-shape") c = make("distil-shape", 6, 768, 12, v, 512);
  else if (name == "albert-shape") c = make("albert-shape", 12, 768, 12, v, 512, true);
  else if (name == "albert-large-shape") c = make("albert-large-shape", 24, 1024, 16, v, 512, true);
  else fail(ErrorCode::kInvalidArgument, "unknown encoder preset '" + std::string(name) + "'");
  validate(c);
  return c;
}

std::size_t count_parameters(const EncoderConfig& c) {
  const std::size_t V = c.vocab_size, P = c.max_positions, H = c.hidden, I = c.intermediate;
  const std::size_t embeddings = V * H + P * H + 2 * H + 2 * H;
  const std::size_t layer = 4 * (H * H + H) + 2 * H + (H * I + I) + (I * H + H) + 2 * H;
  const std::size_t mlm = H * H + H + 2 * H + V;
  const std::size_t nsp = H * H + H + 2 * H + 2;
  return embeddings + (c.shared_layers ? 1 : c.layers) * layer + mlm + nsp;
}

}  // namespace slab
