#include "slab/evalbench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "slab/encoder/model.hpp"
#include "slab/error.hpp"
#include "slab/numerics/adam.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

void validate(const BenchWorkload& w) {
  require(w.seq_len >= 2, ErrorCode::kInvalidArgument, "bench: seq_len must be at least 2");
  require(w.steps >= 1, ErrorCode::kInvalidArgument, "bench: steps must be at least 1");
  require(w.repetitions >= 1, ErrorCode::kInvalidArgument, "bench: repetitions must be at least 1");
  require(w.mask_rate > 0.0 && w.mask_rate <= 1.0, ErrorCode::kInvalidArgument, "bench: mask_rate must be in (0, 1]");
}

namespace {

std::size_t masked_positions(std::size_t seq_len, double mask_rate) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(mask_rate * static_cast<double>(seq_len))));
}

}  // namespace

MemoryEstimate estimate_memory(const EncoderConfig& config, std::size_t seq_len, double mask_rate) {
  validate(config);
  const std::size_t S = seq_len, H = config.hidden, I = config.intermediate, A = config.heads;
  const std::size_t V = config.vocab_size, T = config.layers;
  const std::size_t M = masked_positions(S, mask_rate);

  MemoryEstimate e;
  e.parameters = count_parameters(config);
  e.state_bytes = 4 * 4 * e.parameters;
  e.shared_bytes = 4 * V * H;
  const std::size_t per_layer = S * (18 * H + 3 * I) + 2 * A * S * S;
  const std::size_t per_example = 8 * S * H + T * per_layer + M * (6 * H + 3 * V) + 4 * H + 4;
  e.per_example_bytes = 4 * per_example;
  return e;
}

std::string memory_formula() {
  return "bytes = 4 * (4*P + V*H + B * (8*S*H + T*(S*(18*H + 3*I) + 2*AH*S^2) + M*(6*H + 3*V) + 4*H + 4))\n"
         "P = unique parameters (weights, gradients, Adam m and v), M = ceil(mask_rate*S) masked positions\n";
}

std::size_t max_batch_size(const MemoryEstimate& estimate, std::size_t budget_bytes) {
  auto fits = [&](std::size_t b) {
    if (estimate.per_example_bytes != 0 &&
        b > (std::numeric_limits<std::size_t>::max() - estimate.state_bytes - estimate.shared_bytes) /
                estimate.per_example_bytes)
      return false;
    return estimate.total(b) <= budget_bytes;
  };
  if (!fits(1)) return 0;
  std::size_t lo = 1, hi = 2;
  while (fits(hi)) {
    lo = hi;
    require(hi <= (std::numeric_limits<std::size_t>::max() >> 1), ErrorCode::kInvalidArgument,
            "bench: memory estimate does not grow with batch size");
    hi *= 2;
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

namespace {

struct SyntheticBatch {
  EncoderBatch batch;
  std::vector<std::size_t> positions;
  std::vector<std::int32_t> targets;
  std::vector<std::int32_t> nsp;
};

SyntheticBatch synthetic_batch(const EncoderConfig& config, std::size_t batch, const BenchWorkload& w) {
  Rng rng(mix_seed(w.seed, batch));
  SyntheticBatch s;
  const std::size_t S = w.seq_len, V = config.vocab_size;
  s.batch.batch = batch;
  s.batch.seq = S;
  s.batch.ids.resize(batch * S);
  s.batch.segments.resize(batch * S);
  s.batch.mask.assign(batch * S, 1);
  for (std::size_t i = 0; i < batch * S; ++i) {
    s.batch.ids[i] = static_cast<TokenId>(rng.uniform_int(static_cast<std::uint64_t>(V)));
    s.batch.segments[i] = (i % S) < S / 2 ? 0 : 1;
  }
  const std::size_t M = masked_positions(S, w.mask_rate);
  std::vector<std::size_t> order(S);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < S; ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < M; ++i) {
      s.positions.push_back(b * S + order[i]);
      s.targets.push_back(static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(V))));
    }
    s.nsp.push_back(static_cast<std::int32_t>(b % 2));
  }
  return s;
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

Throughput measure(Encoder<float>& model, std::size_t batch, const BenchWorkload& w, bool train) {
  const SyntheticBatch data = synthetic_batch(model.config(), batch, w);
  auto params = model.parameters();
  AdamState<float> adam;
  std::uint64_t step = 0;
  auto run_step = [&] {
    Tape<float> tape;
    if (!train) {
      model.forward(tape, data.batch, {false, 0});
      return;
    }
    model.zero_grad();
    const auto out = model.forward(tape, data.batch, {true, mix_seed(w.seed, 0xd0, step++)});
    Var<float> mlm = cross_entropy(model.mlm_logits(tape, out.hidden, data.positions),
                                   std::span<const std::int32_t>(data.targets));
    Var<float> nsp = cross_entropy(model.nsp_logits(tape, out.cls), std::span<const std::int32_t>(data.nsp));
    tape.backward(add(mlm, nsp));
    adam_step(std::span<Parameter<float>* const>(params), adam);
  };

  run_step();  // warm-up: first-touch allocations and optimizer state
  std::vector<double> rates;
  for (std::size_t r = 0; r < w.repetitions; ++r) {
    Timer timer;
    for (std::size_t s = 0; s < w.steps; ++s) run_step();
    const double elapsed = std::max(timer.seconds(), 1e-9);
    rates.push_back(static_cast<double>(batch * w.steps) / elapsed);
  }
  std::sort(rates.begin(), rates.end());
  Throughput t;
  const std::size_t n = rates.size();
  t.examples_per_second = n % 2 == 1 ? rates[n / 2] : 0.5 * (rates[n / 2 - 1] + rates[n / 2]);
  t.spread = (rates.back() - rates.front()) / t.examples_per_second;
  t.noisy = t.spread > kNoiseTolerance;
  return t;
}

}  // namespace

Throughput measure_throughput(const EncoderConfig& config, std::size_t batch, const BenchWorkload& workload,
                              bool train) {
  validate(workload);
  require(batch >= 1, ErrorCode::kInvalidArgument, "bench: batch must be at least 1");
  require(workload.seq_len <= config.max_positions, ErrorCode::kInvalidArgument,
          "bench: seq_len exceeds max_positions of " + config.preset);
  Encoder<float> model(config, workload.seed, Encoder<float>::Init::kConstant);
  return measure(model, batch, workload, train);
}

std::vector<BenchRow> bench(const BenchOptions& options) {
  validate(options.workload);
  const auto ref_it = std::find(options.presets.begin(), options.presets.end(), options.reference);
  require(ref_it != options.presets.end(), ErrorCode::kInvalidArgument,
          "bench: reference preset '" + options.reference + "' is not in the preset list");

  std::vector<BenchRow> rows;
  for (const std::string& name : options.presets) {
    const EncoderConfig config = preset_config(name, options.vocab_size);
    require(options.workload.seq_len <= config.max_positions, ErrorCode::kInvalidArgument,
            "bench: seq_len exceeds max_positions of " + name);
    const MemoryEstimate estimate = estimate_memory(config, options.workload.seq_len, options.workload.mask_rate);
    BenchRow row;
    row.preset = name;
    row.params = estimate.parameters;
    row.layers = config.layers;
    row.hidden = config.hidden;
    row.heads = config.heads;
    row.max_bs = max_batch_size(estimate, options.budget_bytes);
    row.feasible = row.max_bs > 0;
    if (row.feasible) {
      Encoder<float> model(config, options.workload.seed, Encoder<float>::Init::kConstant);
      row.train_bs1 = measure(model, 1, options.workload, true);
      if (options.time_max_batch) {
        row.train_max = row.max_bs == 1 ? row.train_bs1 : measure(model, row.max_bs, options.workload, true);
        row.max_timed = true;
      }
      row.infer_bs1 = measure(model, 1, options.workload, false);
    }
    rows.push_back(std::move(row));
  }

  const BenchRow& ref = rows[static_cast<std::size_t>(ref_it - options.presets.begin())];
  require(ref.feasible, ErrorCode::kInvalidArgument,
          "bench: reference preset '" + options.reference + "' does not fit the memory budget at batch 1");
  const BenchRow reference = ref;
  for (BenchRow& row : rows) {
    if (!row.feasible) continue;
    if (row.preset == reference.preset) {
      row.train_speed_bs1 = row.infer_speed_bs1 = 1.0;
      if (row.max_timed) row.train_speed_max = 1.0;
      continue;
    }
    row.train_speed_bs1 = row.train_bs1.examples_per_second / reference.train_bs1.examples_per_second;
    if (row.max_timed)
      row.train_speed_max = row.train_max.examples_per_second / reference.train_max.examples_per_second;
    row.infer_speed_bs1 = row.infer_bs1.examples_per_second / reference.infer_bs1.examples_per_second;
  }
  return rows;
}

namespace {

std::string ratio(const BenchRow& row, const std::optional<double>& v) {
  if (!row.feasible) return "infeasible";
  if (!v) return "skipped";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "preset,params,T,HU,AH,max_bs,train_speed_bs1,train_speed_max,infer_speed_bs1\n";
  for (const BenchRow& r : rows)
    out << r.preset << ',' << r.params << ',' << r.layers << ',' << r.hidden << ',' << r.heads << ',' << r.max_bs
        << ',' << ratio(r, r.train_speed_bs1) << ',' << ratio(r, r.train_speed_max) << ',' << ratio(r, r.infer_speed_bs1)
        << '\n';
  return out.str();
}

std::string bench_noise_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "preset,regime,examples_per_second,spread,noisy\n";
  char buf[96];
  for (const BenchRow& r : rows) {
    if (!r.feasible) continue;
    const std::pair<const char*, const Throughput*> regimes[] = {
        {"train_bs1", &r.train_bs1}, {"train_max", &r.train_max}, {"infer_bs1", &r.infer_bs1}};
    for (const auto& [regime, t] : regimes) {
      if (t == &r.train_max && !r.max_timed) continue;
      std::snprintf(buf, sizeof buf, "%.4g,%.3f,%s", t->examples_per_second, t->spread, t->noisy ? "yes" : "no");
      out << r.preset << ',' << regime << ',' << buf << '\n';
    }
  }
  return out.str();
}

}  // namespace slab
