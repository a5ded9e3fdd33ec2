#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "slab/cli/synth.hpp"
#include "slab/encoder/model.hpp"
#include "slab/heads/crf.hpp"
#include "slab/numerics/adam.hpp"
#include "slab/numerics/kernels.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/pretrain/examples.hpp"
#include "slab/tokenizer/vocab.hpp"

using namespace slab;

static void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<float> a(n * n), b(n * n), c(n * n);
  for (auto& x : a) x = static_cast<float>(rng.normal(0.0, 1.0));
  for (auto& x : b) x = static_cast<float>(rng.normal(0.0, 1.0));
  for (auto _ : state) {
    kernels::gemm_nn(a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_GemmNN)->Arg(64)->Arg(256)->Arg(512);

static void BM_CrfForwardViterbi(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 9;
  Rng rng(2);
  TagLattice<double> lattice{Tensor<double>({steps, k}), Tensor<double>({k, k})};
  for (auto& x : lattice.emissions.data()) x = rng.normal(0.0, 1.0);
  for (auto& x : lattice.transitions.data()) x = rng.normal(0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(crf_log_partition(lattice));
    benchmark::DoNotOptimize(crf_viterbi(lattice).score);
  }
}
BENCHMARK(BM_CrfForwardViterbi)->Arg(32)->Arg(128);

static void BM_TinyTrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t seq = 64;
  EncoderConfig config = preset_config("tiny");
  config.max_positions = seq;
  Encoder<float> model(config, 3);
  Rng rng(4);
  EncoderBatch b;
  b.batch = batch;
  b.seq = seq;
  for (std::size_t i = 0; i < batch * seq; ++i) {
    b.ids.push_back(static_cast<TokenId>(special::kCount + rng.uniform_int(config.vocab_size - special::kCount)));
    b.segments.push_back(i % seq < seq / 2 ? 0 : 1);
    b.mask.push_back(1);
  }
  std::vector<std::size_t> positions;
  std::vector<std::int32_t> targets;
  for (std::size_t i = 0; i < batch * seq; i += 7) {
    positions.push_back(i);
    targets.push_back(b.ids[i]);
  }
  auto params = model.parameters();
  AdamState<float> adam;
  std::uint64_t step = 0;
  for (auto _ : state) {
    Tape<float> tape;
    model.zero_grad();
    const auto out = model.forward(tape, b, {true, step++});
    Var<float> loss = cross_entropy(model.mlm_logits(tape, out.hidden, positions), targets);
    tape.backward(loss);
    adam_step(std::span<Parameter<float>* const>(params), adam);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_TinyTrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_VocabEncode(benchmark::State& state) {
  SynthSpec spec;
  spec.domains = {"a"};
  spec.docs_per_domain = 100;
  const auto docs = generate_corpora(spec).front();
  const Vocab vocab = Vocab::train(docs, 500, 0);
  std::size_t bytes = 0;
  for (auto _ : state) {
    for (const auto& d : docs) benchmark::DoNotOptimize(vocab.encode(d).size());
  }
  for (const auto& d : docs) bytes += d.size();
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes));
}
BENCHMARK(BM_VocabEncode)->Unit(benchmark::kMillisecond);

static void BM_MaskTokens(benchmark::State& state) {
  std::vector<TokenId> ids(512);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(special::kCount + i % 500);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(mask_tokens(ids, 0.15, seed++, 1000).selected());
}
BENCHMARK(BM_MaskTokens);

BENCHMARK_MAIN();
