#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slab/encoder/checkpoint.hpp"
#include "slab/numerics/adam.hpp"
#include "slab/pretrain/examples.hpp"

namespace slab {

inline constexpr std::size_t kDefaultPretrainBatch = 256;
inline constexpr double kDefaultPretrainLr = 1e-4;

struct PretrainPlan {
  // SC and GENERIC start from random weights with the supplied vocabulary;
  // FP starts from `parent` and must use the parent's vocabulary.
  Strategy strategy = Strategy::kSc;
  std::filesystem::path parent;
  EncoderConfig config;  // ignored for FP (taken from the parent)

  std::int64_t total_steps = 0;
  // Steps at which checkpoints are written in addition to the initial one at
  // step 0. Empty means 20/40/60/80/100 % of total_steps.
  std::vector<std::int64_t> emit_steps;
  std::size_t batch_size = kDefaultPretrainBatch;
  std::size_t seq_len = kMaxSequenceLength;
  AdamHyper adam{kDefaultPretrainLr};
  // Linear warmup over warmup_fraction of the steps, then linear decay to 0.
  bool schedule = true;
  double warmup_fraction = 0.01;
  bool nsp = true;
  double mask_rate = kDefaultMaskRate;
  std::size_t dupe_factor = 10;
  std::int64_t log_interval = 1;
  std::uint64_t seed = 0;

  std::filesystem::path out_dir;
};

// Throws kInvalidArgument describing the first problem found.
void validate(const PretrainPlan& plan);
std::vector<std::int64_t> emission_schedule(const PretrainPlan& plan);
double scheduled_lr(const PretrainPlan& plan, std::int64_t step);  // step counts from 0

struct LossRecord {
  std::int64_t step = 0;  // 1-based count of completed updates
  double loss = 0.0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  double lr = 0.0;
  bool operator==(const LossRecord&) const = default;
};

inline constexpr const char* kLossLogHeader = "step,loss,mlm_loss,nsp_loss,lr";
std::string format_loss_record(const LossRecord& r);
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

struct PretrainResult {
  std::vector<std::filesystem::path> checkpoints;  // in step order, including step 0
  std::vector<LossRecord> log;                     // records written by this call
  std::filesystem::path log_path;
};

// Runs the plan on `docs`, writing out_dir/checkpoints/step-<n>.ckpt,
// out_dir/loss.csv and out_dir/run.txt. With `resume_from` (a checkpoint
// emitted by an earlier run of the same plan) training continues from that
// step with the saved optimizer state and data cursor, and loss.csv keeps
// only rows up to that step before appending. Errors: kFingerprintMismatch
// (FP vocabulary differs from the parent's), kNonFinite (training stopped;
// the last written checkpoint is left in place), kConfigMismatch (resume
// checkpoint from a different plan).
PretrainResult pretrain(const PretrainPlan& plan, std::span<const Document> docs, const Vocab& vocab,
                        const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace slab
