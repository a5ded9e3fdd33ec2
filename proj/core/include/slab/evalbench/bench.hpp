#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slab/encoder/config.hpp"

namespace slab {

struct BenchWorkload {
  std::size_t seq_len = 16;
  std::size_t steps = 1;        // timed updates (or forward passes) per repetition
  std::size_t repetitions = 3;
  double mask_rate = 0.15;
  std::uint64_t seed = 0;
};

void validate(const BenchWorkload& workload);

// Analytic training-step memory in bytes (float32 everywhere):
//
//   state       4 * P                                   weights, gradients, Adam m and v
//   shared      V*H                                     transposed decoder for the MLM logits
//   per example
//     embeddings  8*S*H
//     per layer   S*(18*H + 3*I) + 2*AH*S^2             projections, residuals, LayerNorms, FFN,
//                                                       attention probabilities and their dropout mask
//     MLM         M*(6*H + 3*V),  M = ceil(mask_rate*S)
//     NSP         4*H + 4
//   bytes = 4 * (state + shared + B * per_example)
//
// P counts unique parameters, so weight sharing lowers the state term but not
// the per-layer activations. Layers contribute T times either way.
struct MemoryEstimate {
  std::size_t parameters = 0;
  std::size_t state_bytes = 0;
  std::size_t shared_bytes = 0;
  std::size_t per_example_bytes = 0;

  std::size_t total(std::size_t batch) const { return state_bytes + shared_bytes + batch * per_example_bytes; }
};

MemoryEstimate estimate_memory(const EncoderConfig& config, std::size_t seq_len, double mask_rate);
std::string memory_formula();

// Largest batch whose estimate fits the budget: doubling from 1 until the
// estimate overflows, then bisection between the last fit and the first
// miss. 0 when batch 1 does not fit.
std::size_t max_batch_size(const MemoryEstimate& estimate, std::size_t budget_bytes);

struct Throughput {
  double examples_per_second = 0.0;  // median over repetitions
  double spread = 0.0;               // (max - min) / median of the repetition rates
  bool noisy = false;                // spread above kNoiseTolerance
};

inline constexpr double kNoiseTolerance = 0.10;

// Wall-clock examples per second over the workload: forward, MLM + NSP loss,
// backward and an Adam update per step when training; a forward pass
// otherwise.
Throughput measure_throughput(const EncoderConfig& config, std::size_t batch, const BenchWorkload& workload,
                              bool train);

struct BenchRow {
  std::string preset;
  std::size_t params = 0;
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  std::size_t max_bs = 0;
  bool feasible = false;
  bool max_timed = false;
  // Relative to the reference preset; empty when the row is infeasible or the
  // regime was not timed.
  std::optional<double> train_speed_bs1;
  std::optional<double> train_speed_max;
  std::optional<double> infer_speed_bs1;
  Throughput train_bs1, train_max, infer_bs1;
};

struct BenchOptions {
  std::vector<std::string> presets{"base-shape", "small-shape", "distil-shape", "albert-shape",
                                   "albert-large-shape"};
  std::string reference = "base-shape";
  std::size_t budget_bytes = std::size_t{4} << 30;
  std::size_t vocab_size = 0;  // 0 keeps each preset's own
  BenchWorkload workload;
  // When false the max-batch training regime is not timed and its ratio is
  // reported as "skipped"; max_bs is still computed.
  bool time_max_batch = true;
};

// Rows in options.presets order. The reference must be listed and feasible
// (kInvalidArgument otherwise). Timing runs serially.
std::vector<BenchRow> bench(const BenchOptions& options);

// preset,params,T,HU,AH,max_bs,train_speed_bs1,train_speed_max,infer_speed_bs1
// Infeasible rows carry max_bs 0 and the word "infeasible" in every ratio.
// The noise sidecar lists every timed regime.
std::string bench_csv(const std::vector<BenchRow>& rows);

// preset,regime,examples_per_second,spread,noisy
std::string bench_noise_csv(const std::vector<BenchRow>& rows);

}  // namespace slab
