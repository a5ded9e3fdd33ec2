#include "slab/encoder/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "json.hpp"
#include "slab/error.hpp"
#include "slab/util/hash.hpp"
#include "slab/util/io.hpp"

namespace slab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kGeneric: return "GENERIC";
    case Strategy::kFp: return "FP";
    case Strategy::kSc: return "SC";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (t == "GENERIC") return Strategy::kGeneric;
  if (t == "FP") return Strategy::kFp;
  if (t == "SC") return Strategy::kSc;
  fail(ErrorCode::kInvalidArgument, "unknown strategy '" + std::string(text) + "' (expected generic, fp or sc)");
}

const Tensor<float>* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

namespace {

constexpr std::string_view kMagic = "SLAB";

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    require(n <= bytes_.size() - pos_, ErrorCode::kTruncated,
            std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what).data(), 4);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    std::memcpy(&v, take(8, what).data(), 8);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

json config_to_json(const EncoderConfig& c) {
  return json{{"preset", c.preset},
              {"layers", c.layers},
              {"hidden", c.hidden},
              {"heads", c.heads},
              {"intermediate", c.intermediate},
              {"vocab_size", c.vocab_size},
              {"max_positions", c.max_positions},
              {"dropout", c.dropout},
              {"shared_layers", c.shared_layers}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.layers = j.at("layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.intermediate = j.at("intermediate").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.shared_layers = j.at("shared_layers").get<bool>();
  return c;
}

std::string serialize_body(const Checkpoint& ckpt) {
  const json meta{{"config", config_to_json(ckpt.config)},
                  {"vocab_fingerprint", ckpt.vocab_fingerprint},
                  {"lineage",
                   {{"strategy", std::string(to_string(ckpt.lineage.strategy))},
                    {"parent", ckpt.lineage.parent_id},
                    {"steps", ckpt.lineage.steps}}},
                  {"step", ckpt.step},
                  {"state", ckpt.state}};
  const std::string meta_text = meta.dump();

  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put_u64(out, d);
    put_u64(out, offset);
    offset += t.value.size() * sizeof(float);
  }
  put_u64(out, offset);
  out.reserve(out.size() + offset + 8);
  for (const auto& t : ckpt.tensors)
    out.append(reinterpret_cast<const char*>(t.value.data().data()), t.value.size() * sizeof(float));
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = serialize_body(ckpt);
  put_u64(out, fnv1a64(out));
  return out;
}

std::string checkpoint_id(const Checkpoint& ckpt) { return to_hex(fnv1a64(serialize_body(ckpt))); }

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  require(bytes.size() >= 4 && r.take(4, "magic") == kMagic, ErrorCode::kParse, "not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  require(version == kCheckpointVersion, ErrorCode::kVersionMismatch,
          "checkpoint format version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t meta_len = r.u32("metadata length");
  const std::string_view meta_text = r.take(meta_len, "metadata");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(r.u32("tensor count"));
  for (auto& e : entries) {
    e.name = std::string(r.take(r.u32("tensor name length"), "tensor name"));
    const std::uint32_t rank = r.u32("tensor rank");
    require(rank <= 8, ErrorCode::kParse, "checkpoint: implausible rank for tensor " + e.name);
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.u64("tensor extent"));
    e.offset = r.u64("tensor offset");
  }
  const std::uint64_t data_len = r.u64("data length");
  const std::size_t data_start = r.pos();
  const std::string_view data = r.take(data_len, "tensor data");
  const std::uint64_t stored = r.u64("checksum");
  require(r.remaining() == 0, ErrorCode::kParse, "checkpoint: trailing bytes after checksum");
  const std::uint64_t actual = fnv1a64(bytes.substr(0, data_start + data_len));
  require(stored == actual, ErrorCode::kChecksumMismatch,
          "checkpoint checksum mismatch: stored " + to_hex(stored) + ", computed " + to_hex(actual));

  Checkpoint ckpt;
  try {
    const json meta = json::parse(meta_text);
    ckpt.config = config_from_json(meta.at("config"));
    ckpt.vocab_fingerprint = meta.at("vocab_fingerprint").get<std::string>();
    const json& lin = meta.at("lineage");
    ckpt.lineage.strategy = parse_strategy(lin.at("strategy").get<std::string>());
    ckpt.lineage.parent_id = lin.at("parent").get<std::string>();
    ckpt.lineage.steps = lin.at("steps").get<std::int64_t>();
    ckpt.step = meta.at("step").get<std::int64_t>();
    ckpt.state = meta.at("state").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("checkpoint metadata: ") + e.what());
  }
  for (auto& e : entries) {
    const std::size_t n = shape_size(e.shape);
    require(e.offset <= data.size() && n * sizeof(float) <= data.size() - e.offset, ErrorCode::kTruncated,
            "checkpoint: tensor " + e.name + " extends past the data region");
    Tensor<float> t(e.shape);
    std::memcpy(t.data().data(), data.data() + e.offset, n * sizeof(float));
    ckpt.tensors.push_back({std::move(e.name), std::move(t)});
  }
  return ckpt;
}

std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  write_file_atomic(path, bytes);
  std::uint64_t sum;
  std::memcpy(&sum, bytes.data() + bytes.size() - 8, 8);
  return to_hex(sum);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(read_file(path));
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

Checkpoint snapshot(const Encoder<float>& model, const Lineage& lineage, std::int64_t step) {
  Checkpoint c;
  c.config = model.config();
  c.vocab_fingerprint = model.vocab_fingerprint();
  c.lineage = lineage;
  c.step = step;
  for (const Parameter<float>* p : model.parameters()) c.tensors.push_back({p->name, p->value});
  return c;
}

Encoder<float> restore_encoder(const Checkpoint& ckpt) {
  Encoder<float> model(ckpt.config, 0);
  model.set_vocab_fingerprint(ckpt.vocab_fingerprint);
  for (Parameter<float>* p : model.parameters()) {
    const Tensor<float>* t = ckpt.find(p->name);
    require(t != nullptr, ErrorCode::kConfigMismatch, "checkpoint lacks tensor " + p->name + " required by its config");
    require(t->shape() == p->value.shape(), ErrorCode::kConfigMismatch,
            "checkpoint tensor " + p->name + " has shape " + shape_string(t->shape()) + " but the config implies " +
                shape_string(p->value.shape()));
    p->value = *t;
  }
  return model;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Checkpoint c;
  try {
    c = deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
  std::uint64_t sum;
  std::memcpy(&sum, bytes.data() + bytes.size() - 8, 8);
  return {path, to_hex(sum), c.lineage, c.step, c.vocab_fingerprint};
}

std::vector<CheckpointInfo> lineage_chain(const std::filesystem::path& start,
                                          std::span<const std::filesystem::path> known) {
  std::map<std::string, CheckpointInfo> by_id;
  for (const auto& p : known) {
    CheckpointInfo info = read_checkpoint_info(p);
    by_id.emplace(info.id, std::move(info));
  }
  std::vector<CheckpointInfo> chain{read_checkpoint_info(start)};
  while (!chain.back().lineage.parent_id.empty()) {
    require(chain.size() <= by_id.size() + 1, ErrorCode::kParse, "lineage: cycle detected");
    auto it = by_id.find(chain.back().lineage.parent_id);
    require(it != by_id.end(), ErrorCode::kInvalidArgument,
            "lineage: parent " + chain.back().lineage.parent_id + " of " + chain.back().path.string() + " not found");
    chain.push_back(it->second);
  }
  return chain;
}

}  // namespace slab
