#include "slab/pretrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "slab/error.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/util/io.hpp"

namespace slab {

void validate(const PretrainPlan& plan) {
  require(plan.total_steps >= 0, ErrorCode::kInvalidArgument, "pretrain: total steps must be non-negative");
  require(plan.batch_size >= 1, ErrorCode::kInvalidArgument, "pretrain: batch size must be positive");
  require(plan.seq_len >= 5 && plan.seq_len <= kMaxSequenceLength, ErrorCode::kInvalidArgument,
          "pretrain: seq_len must be in [5, 512]");
  require(plan.adam.learning_rate > 0.0, ErrorCode::kInvalidArgument, "pretrain: learning rate must be positive");
  require(plan.warmup_fraction >= 0.0 && plan.warmup_fraction < 1.0, ErrorCode::kInvalidArgument,
          "pretrain: warmup fraction must be in [0, 1)");
  require(plan.mask_rate > 0.0 && plan.mask_rate < 1.0, ErrorCode::kInvalidArgument,
          "pretrain: mask rate must be in (0, 1)");
  require(plan.log_interval >= 1, ErrorCode::kInvalidArgument, "pretrain: log interval must be positive");
  require(plan.strategy != Strategy::kFp || !plan.parent.empty(), ErrorCode::kInvalidArgument,
          "pretrain: strategy fp requires a parent checkpoint");
  require(!plan.out_dir.empty(), ErrorCode::kInvalidArgument, "pretrain: output directory required");
  if (plan.strategy != Strategy::kFp) validate(plan.config);
  for (std::size_t i = 0; i < plan.emit_steps.size(); ++i) {
    require(plan.emit_steps[i] >= 0 && plan.emit_steps[i] <= plan.total_steps, ErrorCode::kInvalidArgument,
            "pretrain: emission step " + std::to_string(plan.emit_steps[i]) + " outside [0, total steps]");
    require(i == 0 || plan.emit_steps[i] > plan.emit_steps[i - 1], ErrorCode::kInvalidArgument,
            "pretrain: emission steps must be strictly increasing");
  }
}

std::vector<std::int64_t> emission_schedule(const PretrainPlan& plan) {
  std::vector<std::int64_t> steps{0};
  if (plan.emit_steps.empty()) {
    for (int pct : {20, 40, 60, 80, 100}) steps.push_back(plan.total_steps * pct / 100);
  } else {
    steps.insert(steps.end(), plan.emit_steps.begin(), plan.emit_steps.end());
  }
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

double scheduled_lr(const PretrainPlan& plan, std::int64_t step) {
  const double lr = plan.adam.learning_rate;
  if (!plan.schedule || plan.total_steps <= 0) return lr;
  const auto total = static_cast<double>(plan.total_steps);
  const double warmup = std::ceil(plan.warmup_fraction * total);
  const auto s = static_cast<double>(step);
  if (s < warmup) return lr * (s + 1.0) / warmup;
  return lr * std::max(0.0, (total - s) / (total - warmup));
}

std::string format_loss_record(const LossRecord& r) {
  return std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.mlm_loss) + "," +
         format_double(r.nsp_loss) + "," + format_double(r.lr);
}

std::vector<LossRecord> read_loss_log(const std::filesystem::path& path) {
  std::vector<LossRecord> out;
  const auto lines = read_lines(path);
  require(!lines.empty() && lines[0] == kLossLogHeader, ErrorCode::kParse, path.string() + ": missing loss log header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream in(lines[i]);
    std::string f[5];
    for (auto& x : f) std::getline(in, x, ',');
    try {
      out.push_back({std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(i + 1) + ": malformed loss record");
    }
  }
  return out;
}

namespace {

struct RunState {
  std::uint64_t epoch = 0;
  std::size_t index = 0;
};

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::map<std::string, std::string> plan_fingerprint(const PretrainPlan& plan) {
  return {{"plan.seed", std::to_string(plan.seed)},
          {"plan.batch_size", std::to_string(plan.batch_size)},
          {"plan.seq_len", std::to_string(plan.seq_len)},
          {"plan.nsp", bool_text(plan.nsp)},
          {"plan.mask_rate", format_double(plan.mask_rate)},
          {"plan.dupe_factor", std::to_string(plan.dupe_factor)},
          {"plan.strategy", std::string(to_string(plan.strategy))}};
}

std::string state_value(const Checkpoint& c, const std::string& key) {
  auto it = c.state.find(key);
  require(it != c.state.end(), ErrorCode::kConfigMismatch, "resume checkpoint lacks run state '" + key + "'");
  return it->second;
}

void write_run_info(const PretrainPlan& plan, const Encoder<float>& model, const Lineage& base,
                    const std::optional<std::filesystem::path>& resume_from) {
  std::ostringstream o;
  o << "strategy=" << to_string(plan.strategy) << "\n";
  o << "parent=" << plan.parent.string() << "\n";
  o << "parent_id=" << base.parent_id << "\n";
  o << "parent_steps=" << base.steps << "\n";
  o << "preset=" << model.config().preset << "\n";
  o << "layers=" << model.config().layers << "\nhidden=" << model.config().hidden << "\nheads=" << model.config().heads
    << "\n";
  o << "vocab_size=" << model.config().vocab_size << "\nvocab_fingerprint=" << model.vocab_fingerprint() << "\n";
  o << "total_steps=" << plan.total_steps << "\nbatch_size=" << plan.batch_size << "\nseq_len=" << plan.seq_len << "\n";
  o << "lr=" << format_double(plan.adam.learning_rate) << "\nschedule=" << bool_text(plan.schedule)
    << "\nwarmup_fraction=" << format_double(plan.warmup_fraction) << "\n";
  o << "nsp=" << (plan.nsp ? "on" : "off") << "\nmask_rate=" << format_double(plan.mask_rate)
    << "\ndupe_factor=" << plan.dupe_factor << "\nseed=" << plan.seed << "\n";
  o << "emit_steps=";
  const auto emit = emission_schedule(plan);
  for (std::size_t i = 0; i < emit.size(); ++i) o << (i ? "," : "") << emit[i];
  o << "\n";
  if (resume_from) o << "resumed_from=" << resume_from->string() << "\n";
  write_file_atomic(plan.out_dir / (resume_from ? "run-resume.txt" : "run.txt"), o.str());
}

}  // namespace

PretrainResult pretrain(const PretrainPlan& plan, std::span<const Document> docs, const Vocab& vocab,
                        const std::optional<std::filesystem::path>& resume_from) {
  validate(plan);
  require(!docs.empty(), ErrorCode::kEmptyInput, "pretrain: document store is empty");

  std::optional<Encoder<float>> model;
  Lineage base{plan.strategy, "", 0};
  if (plan.strategy == Strategy::kFp) {
    const Checkpoint parent = load_checkpoint(plan.parent);
    require(parent.vocab_fingerprint == vocab.fingerprint(), ErrorCode::kFingerprintMismatch,
            "vocabulary fingerprint mismatch: parent checkpoint " + plan.parent.string() + " was trained with " +
                parent.vocab_fingerprint + ", supplied vocabulary is " + vocab.fingerprint());
    model.emplace(restore_encoder(parent));
    base.parent_id = checkpoint_id(parent);
    base.steps = parent.lineage.steps;
  } else {
    require(plan.config.vocab_size == vocab.size(), ErrorCode::kConfigMismatch,
            "pretrain: config vocab_size " + std::to_string(plan.config.vocab_size) + " but the vocabulary has " +
                std::to_string(vocab.size()) + " tokens");
    model.emplace(plan.config, mix_seed(plan.seed, 0x1417));
    model->set_vocab_fingerprint(vocab.fingerprint());
  }
  require(model->config().max_positions >= plan.seq_len, ErrorCode::kConfigMismatch,
          "pretrain: seq_len " + std::to_string(plan.seq_len) + " exceeds the model's max_positions " +
              std::to_string(model->config().max_positions));
  require(model->config().vocab_size == vocab.size(), ErrorCode::kConfigMismatch,
          "pretrain: model vocab_size differs from the vocabulary size");

  AdamState<float> adam;
  adam.hyper = plan.adam;
  RunState cursor;
  std::int64_t start = 0;
  auto params = model->parameters();

  if (resume_from) {
    const Checkpoint ck = load_checkpoint(*resume_from);
    require(ck.vocab_fingerprint == vocab.fingerprint(), ErrorCode::kFingerprintMismatch,
            "vocabulary fingerprint mismatch: resume checkpoint uses " + ck.vocab_fingerprint + ", supplied " +
                vocab.fingerprint());
    for (const auto& [key, value] : plan_fingerprint(plan))
      require(state_value(ck, key) == value, ErrorCode::kConfigMismatch,
              "resume checkpoint was written by a run with " + key + "=" + state_value(ck, key) + ", this plan has " +
                  value);
    model.emplace(restore_encoder(ck));
    params = model->parameters();
    adam.step = std::stoll(state_value(ck, "adam.step"));
    if (adam.step > 0) {
      for (const Parameter<float>* p : params) {
        const Tensor<float>* m = ck.find("adam.m." + p->name);
        const Tensor<float>* v = ck.find("adam.v." + p->name);
        require(m && v, ErrorCode::kConfigMismatch, "resume checkpoint lacks optimizer state for " + p->name);
        adam.m.push_back(*m);
        adam.v.push_back(*v);
      }
    }
    cursor.epoch = std::stoull(state_value(ck, "cursor.epoch"));
    cursor.index = std::stoull(state_value(ck, "cursor.index"));
    start = ck.step;
    require(start <= plan.total_steps, ErrorCode::kInvalidArgument,
            "resume step " + std::to_string(start) + " is beyond total steps " + std::to_string(plan.total_steps));
    base = {ck.lineage.strategy, ck.lineage.parent_id, ck.lineage.steps - ck.step};
  }

  std::filesystem::create_directories(plan.out_dir / "checkpoints");
  write_run_info(plan, *model, base, resume_from);

  PretrainResult result;
  result.log_path = plan.out_dir / "loss.csv";
  {
    std::string kept = std::string(kLossLogHeader) + "\n";
    if (resume_from && std::filesystem::exists(result.log_path))
      for (const LossRecord& r : read_loss_log(result.log_path))
        if (r.step <= start) kept += format_loss_record(r) + "\n";
    write_file_atomic(result.log_path, kept);
  }
  std::ofstream log(result.log_path, std::ios::app | std::ios::binary);

  const auto emit = emission_schedule(plan);
  std::filesystem::path last_checkpoint;
  auto write_checkpoint = [&](std::int64_t step) {
    Checkpoint c = snapshot(*model, {base.strategy, base.parent_id, base.steps + step}, step);
    c.state = plan_fingerprint(plan);
    c.state["adam.step"] = std::to_string(adam.step);
    c.state["cursor.epoch"] = std::to_string(cursor.epoch);
    c.state["cursor.index"] = std::to_string(cursor.index);
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
      c.tensors.push_back({"adam.m." + params[i]->name, adam.m[i]});
      c.tensors.push_back({"adam.v." + params[i]->name, adam.v[i]});
    }
    std::string name = std::to_string(step);
    name = std::string(8 - std::min<std::size_t>(8, name.size()), '0') + name;
    last_checkpoint = plan.out_dir / "checkpoints" / ("step-" + name + ".ckpt");
    save_checkpoint(c, last_checkpoint);
    result.checkpoints.push_back(last_checkpoint);
  };
  if (!resume_from) write_checkpoint(0);
  if (start >= plan.total_steps) return result;

  ExampleOptions ex_opt{plan.seq_len, plan.nsp, plan.mask_rate, plan.dupe_factor, vocab.size(), plan.seed};
  const auto tokenized = tokenize_documents(docs, vocab);
  std::vector<TrainingExample> examples = build_examples(tokenized, ex_opt, cursor.epoch);
  require(!examples.empty(), ErrorCode::kEmptyInput, "pretrain: the store yields no maskable training examples");

  const std::size_t B = plan.batch_size, S = plan.seq_len;
  for (std::int64_t step = start; step < plan.total_steps; ++step) {
    EncoderBatch batch;
    batch.batch = B;
    batch.seq = S;
    batch.vocab_fingerprint = vocab.fingerprint();
    std::vector<std::size_t> positions;
    std::vector<std::int32_t> targets, nsp_labels;
    for (std::size_t b = 0; b < B; ++b) {
      if (cursor.index >= examples.size()) {
        ++cursor.epoch;
        cursor.index = 0;
        examples = build_examples(tokenized, ex_opt, cursor.epoch);
      }
      const TrainingExample& ex = examples[cursor.index++];
      batch.ids.insert(batch.ids.end(), ex.pair.ids.begin(), ex.pair.ids.end());
      batch.segments.insert(batch.segments.end(), ex.pair.segments.begin(), ex.pair.segments.end());
      batch.mask.insert(batch.mask.end(), ex.pair.attention_mask.begin(), ex.pair.attention_mask.end());
      for (std::size_t s = 0; s < S; ++s)
        if (ex.labels[s] != kNoLabel) {
          positions.push_back(b * S + s);
          targets.push_back(ex.labels[s]);
        }
      nsp_labels.push_back(ex.nsp_label);
    }

    model->zero_grad();
    Tape<float> tape;
    const auto out = model->forward(tape, batch, {true, mix_seed(plan.seed, 0xd0, static_cast<std::uint64_t>(step))});
    Var<float> mlm = cross_entropy(model->mlm_logits(tape, out.hidden, positions), std::span<const std::int32_t>(targets));
    Var<float> total = mlm;
    double nsp_value = 0.0;
    if (plan.nsp) {
      Var<float> nsp = cross_entropy(model->nsp_logits(tape, out.cls), std::span<const std::int32_t>(nsp_labels));
      nsp_value = nsp.value().item();
      total = add(mlm, nsp);
    }
    const double loss = total.value().item();
    if (!std::isfinite(loss))
      fail(ErrorCode::kNonFinite, "pretrain: non-finite loss at step " + std::to_string(step + 1) +
                                      "; last good checkpoint is " + last_checkpoint.string());
    tape.backward(total);
    const double lr = scheduled_lr(plan, step);
    adam.hyper.learning_rate = lr;
    adam_step(std::span<Parameter<float>* const>(params), adam);

    const LossRecord rec{step + 1, loss, static_cast<double>(mlm.value().item()), nsp_value, lr};
    if ((step + 1) % plan.log_interval == 0) {
      log << format_loss_record(rec) << "\n";
      log.flush();
      result.log.push_back(rec);
    }
    if (std::binary_search(emit.begin(), emit.end(), step + 1)) write_checkpoint(step + 1);
  }
  return result;
}

}  // namespace slab
