#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "slab/encoder/checkpoint.hpp"
#include "slab/encoder/model.hpp"
#include "slab/error.hpp"
#include "slab/numerics/adam.hpp"
#include "slab/numerics/grad_check.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/util/io.hpp"
#include "unit/support.hpp"

using namespace slab;

namespace {

EncoderConfig tiny() {
  EncoderConfig c = preset_config("tiny");
  c.dropout = 0.0;
  return c;
}

// Random framed pairs of varying real length.
EncoderBatch random_batch(std::size_t vocab, std::size_t batch, std::size_t seq, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedPair> pairs;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<TokenId> a(static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(seq / 2))));
    std::vector<TokenId> c(static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(seq / 2))));
    for (auto& t : a) t = static_cast<TokenId>(rng.uniform_int(5, static_cast<std::int64_t>(vocab) - 1));
    for (auto& t : c) t = static_cast<TokenId>(rng.uniform_int(5, static_cast<std::int64_t>(vocab) - 1));
    pairs.push_back(frame_pair(a, std::span<const TokenId>(c), seq));
  }
  return EncoderBatch::from_pairs(pairs);
}

std::size_t hand_count_tiny() {
  // T=2, HU=64, AH=2, I=256, V=512, P=64, counted tensor by tensor.
  std::size_t n = 0;
  n += 512 * 64;  // token embeddings
  n += 64 * 64;   // position embeddings
  n += 2 * 64;    // segment embeddings
  n += 64 + 64;   // embedding LayerNorm
  for (int layer = 0; layer < 2; ++layer) {
    n += 4 * (64 * 64 + 64);  // q k v o
    n += 64 + 64;             // attention LayerNorm
    n += 64 * 256 + 256;      // ffn in
    n += 256 * 64 + 64;       // ffn out
    n += 64 + 64;             // ffn LayerNorm
  }
  n += 64 * 64 + 64 + 64 + 64 + 512;  // mlm transform, LayerNorm, output bias
  n += 64 * 64 + 64 + 64 * 2 + 2;     // nsp pooler, classifier
  return n;
}

}  // namespace

TEST_CASE("count_parameters: reference presets") {
  const double base = static_cast<double>(count_parameters(preset_config("base")));
  const double small = static_cast<double>(count_parameters(preset_config("small")));
  CHECK(std::abs(base - 110e6) / 110e6 <= 0.03);
  CHECK(std::abs(small - 35e6) / 35e6 <= 0.03);
  CHECK(std::abs(small / base - 0.32) <= 0.02);
  CHECK(count_parameters(preset_config("tiny")) == hand_count_tiny());
}

TEST_CASE("count_parameters equals allocated elements for every preset") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const EncoderConfig c = preset_config(name);
    Encoder<float> model(c, 1, Encoder<float>::Init::kConstant);
    CHECK(model.allocated_elements() == count_parameters(c));
  }
}

TEST_CASE("config validation") {
  EncoderConfig c = tiny();
  c.heads = 3;
  CHECK_THROWS_AS(validate(c), Error);
  CHECK_THROWS_AS(preset_config("huge"), Error);
  CHECK(preset_config("albert-large-shape").hidden % preset_config("albert-large-shape").heads == 0);
}

TEST_CASE("forward: padding receives no attention") {
  Encoder<float> model(tiny(), 3);
  std::vector<EncodedPair> pairs{frame_pair(std::vector<TokenId>{}, std::nullopt, 16)};
  const EncoderBatch batch = EncoderBatch::from_pairs(pairs);
  Tape<float> tape;
  std::vector<Tensor<float>> probs;
  const auto out = model.forward(tape, batch, {}, &probs);
  CHECK(out.hidden.shape() == Shape{16, 64});
  CHECK(out.cls.shape() == Shape{1, 64});
  CHECK(out.hidden.value().all_finite());
  REQUIRE(probs.size() == 2);
  for (const auto& p : probs) {
    for (std::size_t row = 0; row < p.size() / 16; ++row) {
      double real = 0.0;
      for (std::size_t j = 0; j < 16; ++j) {
        const float v = p[row * 16 + j];
        if (j >= 2) CHECK(v == 0.0f);
        real += v;
      }
      CHECK(real == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("forward: attention rows sum to one over real tokens") {
  Encoder<float> model(tiny(), 4);
  const EncoderBatch batch = random_batch(512, 3, 20, 8);
  Tape<float> tape;
  std::vector<Tensor<float>> probs;
  model.forward(tape, batch, {}, &probs);
  for (const auto& p : probs) {
    const std::size_t rows = p.size() / 20;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t b = r / (2 * 20);
      double total = 0.0;
      for (std::size_t j = 0; j < 20; ++j) {
        if (!batch.mask[b * 20 + j]) CHECK(p[r * 20 + j] == 0.0f);
        total += p[r * 20 + j];
      }
      CHECK(std::abs(total - 1.0) <= 1e-5);
    }
  }
}

TEST_CASE("forward: batch equivariance and determinism") {
  Encoder<float> model(tiny(), 5);
  const EncoderBatch batch = random_batch(512, 3, 12, 1);
  EncoderBatch permuted = batch;
  const std::vector<std::size_t> perm{2, 0, 1};
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t s = 0; s < 12; ++s) {
      permuted.ids[b * 12 + s] = batch.ids[perm[b] * 12 + s];
      permuted.segments[b * 12 + s] = batch.segments[perm[b] * 12 + s];
      permuted.mask[b * 12 + s] = batch.mask[perm[b] * 12 + s];
    }
  Tape<float> t1, t2, t3;
  const auto a = model.forward(t1, batch).cls.value();
  const auto b = model.forward(t2, permuted).cls.value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 64; ++c) CHECK(b.at(r, c) == doctest::Approx(a.at(perm[r], c)).epsilon(1e-6));
  CHECK(model.forward(t3, batch).cls.value() == a);

  EncoderConfig with_dropout = tiny();
  with_dropout.dropout = 0.1;
  Encoder<float> dm(with_dropout, 5);
  Tape<float> t4, t5, t6;
  ForwardOptions opt{true, 99};
  const auto d1 = dm.forward(t4, batch, opt).hidden.value();
  const auto d2 = dm.forward(t5, batch, opt).hidden.value();
  CHECK(d1 == d2);
  opt.dropout_seed = 100;
  CHECK(!(dm.forward(t6, batch, opt).hidden.value() == d1));
}

TEST_CASE("forward: vocabulary fingerprint is enforced") {
  Encoder<float> model(tiny(), 1);
  model.set_vocab_fingerprint("aaaa");
  EncoderBatch batch = random_batch(512, 1, 8, 0);
  batch.vocab_fingerprint = "bbbb";
  Tape<float> tape;
  try {
    model.forward(tape, batch);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFingerprintMismatch);
  }
  batch.vocab_fingerprint = "aaaa";
  CHECK_NOTHROW(model.forward(tape, batch));
}

TEST_CASE("golden [CLS] vector for a fixed tiny checkpoint") {
  Encoder<float> model(tiny(), 2024);
  std::vector<TokenId> a{17, 250, 31, 400}, b{99, 7};
  std::vector<EncodedPair> pairs{frame_pair(a, std::span<const TokenId>(b), 12)};
  Tape<float> tape;
  const auto cls = model.forward(tape, EncoderBatch::from_pairs(pairs)).cls.value();
  const auto path = std::filesystem::path(SLAB_TEST_DATA_DIR) / "encoder_golden_cls.txt";
  std::ostringstream computed;
  computed.precision(9);
  for (float v : cls.data()) computed << v << "\n";
  REQUIRE_MESSAGE(std::filesystem::exists(path), "golden file missing, computed:\n" << computed.str());
  const auto lines = read_lines(path);
  REQUIRE(lines.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(cls[i] == doctest::Approx(std::stod(lines[i])).epsilon(1e-5));
}

TEST_CASE("mlm_logits shapes and initial entropy") {
  Encoder<float> model(tiny(), 6);
  const EncoderBatch batch = random_batch(512, 2, 16, 3);
  Tape<float> tape;
  const auto out = model.forward(tape, batch);
  CHECK(model.mlm_logits(tape, out.hidden, {}).shape() == Shape{0, 512});
  std::vector<std::size_t> bad{32};
  CHECK_THROWS_AS(model.mlm_logits(tape, out.hidden, bad), Error);

  std::vector<std::size_t> positions{1, 2, 3, 17, 18};
  const auto logits = model.mlm_logits(tape, out.hidden, positions).value();
  CHECK(logits.shape() == Shape{5, 512});
  const auto lp = log_softmax_rows(logits);
  for (std::size_t r = 0; r < 5; ++r) {
    double h = 0.0;
    for (float v : lp.row(r)) h -= std::exp(static_cast<double>(v)) * v;
    CHECK(std::abs(h - std::log(512.0)) / std::log(512.0) <= 0.10);
  }
  CHECK(model.nsp_logits(tape, out.cls).shape() == Shape{2, 2});
  Tape<float> empty_tape;
  auto empty_cls = empty_tape.constant(Tensor<float>(Shape{0, 64}));
  CHECK(model.nsp_logits(empty_tape, empty_cls).shape() == Shape{0, 2});
}

TEST_CASE("overfit one batch: MLM loss below 0.1 within 200 Adam steps") {
  Encoder<float> model(tiny(), 7);
  const EncoderBatch batch = random_batch(512, 2, 16, 11);
  std::vector<std::size_t> positions;
  std::vector<std::int32_t> targets;
  EncoderBatch masked = batch;
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.ids[i] >= special::kCount && i % 3 == 1) {
      positions.push_back(i);
      targets.push_back(batch.ids[i]);
      masked.ids[i] = special::kMask;
    }
  }
  REQUIRE(!positions.empty());
  AdamState<float> state;
  state.hyper.learning_rate = 1e-3;
  auto params = model.parameters();
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    model.zero_grad();
    Tape<float> tape;
    const auto out = model.forward(tape, masked);
    auto l = cross_entropy(model.mlm_logits(tape, out.hidden, positions), std::span<const std::int32_t>(targets));
    loss = l.value().item();
    tape.backward(l);
    adam_step(std::span<Parameter<float>* const>(params), state);
  }
  CHECK(loss < 0.1);
  CHECK(state.step == 200);
}

TEST_CASE("NSP head separates perfectly separable pairs") {
  // Label 1 iff the second segment starts with token 5; otherwise it starts with 6.
  Rng rng(12);
  auto make = [&](std::size_t n, std::vector<std::int32_t>& labels) {
    std::vector<EncodedPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pos = rng.bernoulli(0.5);
      std::vector<TokenId> a(4), b(4);
      for (auto& t : a) t = static_cast<TokenId>(rng.uniform_int(7, 60));
      for (auto& t : b) t = static_cast<TokenId>(rng.uniform_int(7, 60));
      b[0] = pos ? 5 : 6;
      pairs.push_back(frame_pair(a, std::span<const TokenId>(b), 12));
      labels.push_back(pos ? 1 : 0);
    }
    return EncoderBatch::from_pairs(pairs);
  };
  EncoderConfig c = tiny();
  c.vocab_size = 64;
  Encoder<float> model(c, 13);
  AdamState<float> state;
  state.hyper.learning_rate = 1e-3;
  auto params = model.parameters();
  for (int step = 0; step < 150; ++step) {
    std::vector<std::int32_t> labels;
    const auto batch = make(16, labels);
    model.zero_grad();
    Tape<float> tape;
    auto l = cross_entropy(model.nsp_logits(tape, model.forward(tape, batch).cls), std::span<const std::int32_t>(labels));
    tape.backward(l);
    adam_step(std::span<Parameter<float>* const>(params), state);
  }
  std::vector<std::int32_t> labels;
  const auto test = make(200, labels);
  Tape<float> tape;
  const auto logits = model.nsp_logits(tape, model.forward(tape, test).cls).value();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
    correct += pred == labels[i];
    const auto p = softmax(Tensor<float>(Shape{2}, {logits.at(i, 0), logits.at(i, 1)}), 0);
    CHECK(p[0] + p[1] == doctest::Approx(1.0f));
  }
  CHECK(static_cast<double>(correct) / 200.0 > 0.95);
}

TEST_CASE("grad_check: full tiny encoder MLM + NSP loss in 64-bit") {
  Encoder<double> model = Encoder<float>(tiny(), 21).cast<double>();
  const EncoderBatch batch = random_batch(512, 2, 10, 5);
  std::vector<std::size_t> positions{1, 3, 12, 14};
  std::vector<std::int32_t> targets{9, 100, 311, 42};
  std::vector<std::int32_t> nsp{0, 1};
  auto params = model.parameters();
  GradCheckOptions opt;
  opt.epsilon = 1e-6;
  opt.max_coords_per_tensor = 4;
  opt.seed = 3;
  const auto report = grad_check(
      [&](Tape<double>& tape) {
        const auto out = model.forward(tape, batch);
        auto mlm = cross_entropy(model.mlm_logits(tape, out.hidden, positions), std::span<const std::int32_t>(targets));
        auto ns = cross_entropy(model.nsp_logits(tape, out.cls), std::span<const std::int32_t>(nsp));
        return add(mlm, ns);
      },
      std::span<Parameter<double>* const>(params), opt);
  CHECK(report.coords_checked > 100);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round trip and integrity errors") {
  const auto dir = test::scratch_dir("ckpt");
  Encoder<float> model(tiny(), 8);
  model.set_vocab_fingerprint("0123456789abcdef");
  Checkpoint c = snapshot(model, {Strategy::kSc, "", 40}, 40);
  c.state["cursor"] = "17";
  const std::string id = save_checkpoint(c, dir / "a.ckpt");
  CHECK(id == checkpoint_id(c));
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back == c);
  const Encoder<float> restored = restore_encoder(back);
  for (const auto* p : model.parameters()) CHECK(restored.param(p->name).value == p->value);
  CHECK(restored.vocab_fingerprint() == model.vocab_fingerprint());

  std::string bytes = read_file(dir / "a.ckpt");
  auto expect_code = [](const std::string& b, ErrorCode code) {
    try {
      deserialize_checkpoint(b);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  SUBCASE("corrupted tensor byte") {
    std::string bad = bytes;
    bad[bad.size() - 100] ^= 0x5a;
    expect_code(bad, ErrorCode::kChecksumMismatch);
  }
  SUBCASE("truncated") { expect_code(bytes.substr(0, bytes.size() - 9), ErrorCode::kTruncated); }
  SUBCASE("version") {
    std::string bad = bytes;
    bad[4] = 2;
    expect_code(bad, ErrorCode::kVersionMismatch);
  }
  SUBCASE("magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    expect_code(bad, ErrorCode::kParse);
  }
  SUBCASE("config disagrees with tensors") {
    Checkpoint wrong = c;
    wrong.config.intermediate = 128;
    try {
      restore_encoder(wrong);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfigMismatch);
    }
  }
}

TEST_CASE("lineage chain over three checkpoints") {
  const auto dir = test::scratch_dir("lineage");
  Encoder<float> model(tiny(), 9);
  const std::string root = save_checkpoint(snapshot(model, {Strategy::kGeneric, "", 100}, 100), dir / "root.ckpt");
  model.param("mlm.bias").value[0] = 1.0f;
  const std::string mid = save_checkpoint(snapshot(model, {Strategy::kFp, root, 150}, 50), dir / "mid.ckpt");
  model.param("mlm.bias").value[0] = 2.0f;
  save_checkpoint(snapshot(model, {Strategy::kFp, mid, 180}, 30), dir / "leaf.ckpt");
  std::vector<std::filesystem::path> known{dir / "root.ckpt", dir / "mid.ckpt", dir / "leaf.ckpt"};
  const auto chain = lineage_chain(dir / "leaf.ckpt", known);
  REQUIRE(chain.size() == 3);
  CHECK(chain[0].lineage.steps == 180);
  CHECK(chain[1].id == mid);
  CHECK(chain[2].id == root);
  CHECK(chain[2].lineage.strategy == Strategy::kGeneric);
  CHECK(chain[2].lineage.parent_id.empty());
  std::vector<std::filesystem::path> partial{dir / "leaf.ckpt"};
  CHECK_THROWS_AS(lineage_chain(dir / "leaf.ckpt", partial), Error);
}
