#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "slab/cli/tasks.hpp"
#include "slab/encoder/checkpoint.hpp"
#include "slab/evalbench/metrics.hpp"
#include "slab/tokenizer/vocab.hpp"
#include "slab/tune/grid.hpp"

namespace slab {

struct TaskData {
  TaskKind kind = TaskKind::kMultilabel;
  Splits<TextRecord> text;
  Splits<HierRecord> hier;
  Splits<NerRecord> ner;

  // Reads <stem>.{train,dev,test}.jsonl with the record type of `kind`.
  static TaskData load(TaskKind kind, const std::filesystem::path& stem);
};

struct FineTuneSettings {
  std::size_t max_len = 128;   // per sequence (per fact for hierarchical tasks)
  std::size_t max_facts = 16;  // longer documents keep their first facts
  bool freeze_encoder = false;
  double threshold = 0.5;
  // Learning-rate multiplier for the CRF transition matrix.
  double crf_lr_scale = 100.0;
  std::size_t eval_batch = 32;
};

enum class DataSplit { kTrain, kDev, kTest };

class TaskModel;

// Fine-tuning of a pre-trained encoder with the head matching the task kind:
// multilabel -> sigmoid head on [CLS] (micro-F1); hierarchical-binary -> L = 1
// head on the pooled document (accuracy); hierarchical-multilabel -> pooled
// document with L labels (micro-F1); ner -> linear emissions at each word's
// first subword into a CRF (entity F1).
class EncoderTask : public FineTuneTask {
 public:
  EncoderTask(std::string id, const Checkpoint& base, const Vocab& vocab, TaskData data,
              FineTuneSettings settings = {});
  ~EncoderTask() override;

  std::string id() const override { return id_; }
  std::string metric_name() const override;
  std::string checkpoint_id() const override { return checkpoint_id_; }
  std::unique_ptr<TrialModel> instantiate(const TrialConfig& config) const override;

  TaskKind kind() const;
  const std::vector<std::string>& labels() const;

  // A model restored from a fine-tuned checkpoint written by TaskModel.
  std::unique_ptr<TaskModel> load(const Checkpoint& finetuned) const;

  struct Prepared;

 private:
  std::string id_;
  std::string checkpoint_id_;
  std::shared_ptr<const Prepared> prepared_;
};

class TaskModel : public TrialModel {
 public:
  virtual MetricReport evaluate(DataSplit split) = 0;
  virtual Evaluation evaluate_loss(DataSplit split) = 0;
  // Encoder plus head tensors; state records the task kind and label set.
  virtual Checkpoint export_checkpoint() const = 0;
};

}  // namespace slab
