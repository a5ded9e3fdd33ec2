#include "slab/tune/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "slab/heads/crf.hpp"
#include "slab/heads/hier.hpp"
#include "slab/heads/multilabel.hpp"
#include "slab/heads/ner.hpp"
#include "slab/numerics/adam.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

TaskData TaskData::load(TaskKind kind, const std::filesystem::path& stem) {
  TaskData d;
  d.kind = kind;
  switch (kind) {
    case TaskKind::kMultilabel: d.text = read_splits<TextRecord>(stem); break;
    case TaskKind::kHierBinary:
    case TaskKind::kHierMultilabel: d.hier = read_splits<HierRecord>(stem); break;
    case TaskKind::kNer: d.ner = read_splits<NerRecord>(stem); break;
  }
  return d;
}

namespace {

struct Example {
  std::vector<std::vector<TokenId>> segments;  // one entry, or one per fact
  std::vector<float> targets;                  // L, for classification
  std::vector<std::string> words;              // ner
  std::vector<std::string> gold_tags;          // ner, all words
  WordPieces pieces;                           // ner
  std::vector<std::int32_t> tag_ids;           // ner, kept words
};

std::vector<TokenId> clip(std::vector<TokenId> ids, std::size_t max_len) {
  if (ids.size() > max_len - 2) ids.resize(max_len - 2);
  return ids;
}

std::string json_list(const std::vector<std::string>& v) { return nlohmann::json(v).dump(); }

}  // namespace

struct EncoderTask::Prepared {
  TaskKind kind;
  FineTuneSettings settings;
  Encoder<float> encoder{preset_config("tiny"), 0, Encoder<float>::Init::kConstant};
  Checkpoint base;
  std::vector<std::string> labels;  // classification label names, or tag names
  TagSet tags;
  std::vector<Example> split[3];

  bool is_ner() const { return kind == TaskKind::kNer; }
  bool is_hier() const { return kind == TaskKind::kHierBinary || kind == TaskKind::kHierMultilabel; }
  std::size_t outputs() const { return is_ner() ? tags.size() : labels.size(); }

  std::vector<float> targets_of(const std::vector<std::string>& names) const {
    std::vector<float> t(labels.size(), 0.0f);
    for (const auto& n : names) {
      auto it = std::lower_bound(labels.begin(), labels.end(), n);
      if (it != labels.end() && *it == n) t[static_cast<std::size_t>(it - labels.begin())] = 1.0f;
    }
    return t;
  }
};

EncoderTask::EncoderTask(std::string id, const Checkpoint& base, const Vocab& vocab, TaskData data,
                         FineTuneSettings settings)
    : id_(std::move(id)), checkpoint_id_(slab::checkpoint_id(base)) {
  require(base.vocab_fingerprint == vocab.fingerprint(), ErrorCode::kFingerprintMismatch,
          "fine-tuning: checkpoint vocabulary " + base.vocab_fingerprint + " does not match " + vocab.fingerprint());
  require(settings.max_len >= 3 && settings.max_len <= base.config.max_positions, ErrorCode::kInvalidArgument,
          "fine-tuning: max_len must be in [3, " + std::to_string(base.config.max_positions) + "]");
  require(settings.max_facts >= 1 && settings.eval_batch >= 1, ErrorCode::kInvalidArgument,
          "fine-tuning: max_facts and eval_batch must be >= 1");
  auto p = std::make_shared<Prepared>();
  p->kind = data.kind;
  p->settings = settings;
  p->encoder = restore_encoder(base);
  p->base = base;
  p->base.tensors.clear();

  const std::size_t max_len = settings.max_len;
  if (data.kind == TaskKind::kNer) {
    std::vector<std::vector<std::string>> all;
    for (const auto* s : {&data.ner.train, &data.ner.dev, &data.ner.test})
      for (const auto& r : *s) all.push_back(r.tags);
    p->tags = TagSet::from_sequences(all);
    p->labels = p->tags.names();
    const std::vector<NerRecord>* splits[3] = {&data.ner.train, &data.ner.dev, &data.ner.test};
    for (int s = 0; s < 3; ++s)
      for (const auto& r : *splits[s]) {
        require(r.tokens.size() == r.tags.size(), ErrorCode::kInvalidArgument,
                "record " + r.id + ": tokens and tags differ in length");
        Example e;
        e.words = r.tokens;
        e.gold_tags = r.tags;
        e.pieces = align_words(vocab, r.tokens, max_len);
        const auto ids = p->tags.ids(r.tags);
        e.tag_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(e.pieces.first_subword.size()));
        p->split[s].push_back(std::move(e));
      }
  } else {
    std::set<std::string> names;
    auto collect = [&](const auto& records) {
      for (const auto& r : records) names.insert(r.labels.begin(), r.labels.end());
    };
    if (p->is_hier()) {
      collect(data.hier.train), collect(data.hier.dev), collect(data.hier.test);
    } else {
      collect(data.text.train), collect(data.text.dev), collect(data.text.test);
    }
    p->labels.assign(names.begin(), names.end());
    if (data.kind == TaskKind::kHierBinary)
      require(p->labels.size() == 1, ErrorCode::kInvalidArgument,
              "binary task needs exactly one label name, found " + std::to_string(p->labels.size()));
    require(!p->labels.empty(), ErrorCode::kEmptyInput, "task data carries no labels");
    for (int s = 0; s < 3; ++s) {
      if (p->is_hier()) {
        const std::vector<HierRecord>* src[3] = {&data.hier.train, &data.hier.dev, &data.hier.test};
        for (const auto& r : *src[s]) {
          require(!r.facts.empty(), ErrorCode::kEmptyInput, "record " + r.id + " has no facts");
          Example e;
          for (std::size_t f = 0; f < std::min(r.facts.size(), settings.max_facts); ++f)
            e.segments.push_back(clip(vocab.encode(r.facts[f]), max_len));
          e.targets = p->targets_of(r.labels);
          p->split[s].push_back(std::move(e));
        }
      } else {
        const std::vector<TextRecord>* src[3] = {&data.text.train, &data.text.dev, &data.text.test};
        for (const auto& r : *src[s]) {
          Example e;
          e.segments.push_back(clip(vocab.encode(r.text), max_len));
          e.targets = p->targets_of(r.labels);
          p->split[s].push_back(std::move(e));
        }
      }
    }
  }
  prepared_ = std::move(p);
}

EncoderTask::~EncoderTask() = default;

TaskKind EncoderTask::kind() const { return prepared_->kind; }
const std::vector<std::string>& EncoderTask::labels() const { return prepared_->labels; }

std::string EncoderTask::metric_name() const {
  switch (prepared_->kind) {
    case TaskKind::kHierBinary: return "accuracy";
    case TaskKind::kNer: return "entity_f1";
    default: return "micro_f1";
  }
}

namespace {

class EncoderTaskModel : public TaskModel {
 public:
  using Prepared = EncoderTask::Prepared;

  EncoderTaskModel(std::shared_ptr<const Prepared> p, double dropout, std::uint64_t seed)
      : p_(std::move(p)),
        encoder_(p_->encoder),
        head_(encoder_.config().hidden, p_->outputs(), mix_seed(seed, 0x4e)),
        pooler_(encoder_.config().hidden, mix_seed(seed, 0x90)),
        transitions_("crf.transitions", Tensor<float>({p_->outputs(), p_->outputs()})) {
    encoder_.set_dropout(dropout);
    if (!p_->settings.freeze_encoder)
      for (auto* q : encoder_.parameters()) trainable_.push_back(q);
    trainable_.push_back(&head_.weight);
    trainable_.push_back(&head_.bias);
    if (p_->is_hier())
      for (auto* q : pooler_.parameters()) trainable_.push_back(q);
  }

  std::size_t train_size() const override { return p_->split[0].size(); }

  double train_step(std::span<const std::size_t> batch, double learning_rate, std::uint64_t dropout_seed) override {
    for (auto* q : trainable_) q->zero_grad();
    transitions_.zero_grad();
    encoder_.zero_grad();
    Tape<float> tape;
    const Var<float> loss = batch_loss(tape, p_->split[0], batch, {true, dropout_seed});
    const double value = loss.value().item();
    if (!std::isfinite(value)) return value;
    tape.backward(loss);
    adam_.hyper.learning_rate = learning_rate;
    adam_step(std::span<Parameter<float>* const>(trainable_), adam_);
    if (p_->is_ner()) {
      crf_adam_.hyper.learning_rate = learning_rate * p_->settings.crf_lr_scale;
      Parameter<float>* t[] = {&transitions_};
      adam_step(std::span<Parameter<float>* const>(t), crf_adam_);
    }
    return value;
  }

  Evaluation evaluate_dev() override {
    Evaluation e = evaluate_loss(DataSplit::kDev);
    e.metric = evaluate(DataSplit::kDev).value;
    return e;
  }

  Evaluation evaluate_loss(DataSplit split) override {
    const auto& data = p_->split[static_cast<int>(split)];
    require(!data.empty(), ErrorCode::kEmptyInput, "evaluation split is empty");
    double total = 0.0;
    for_chunks(data.size(), [&](std::span<const std::size_t> idx) {
      Tape<float> tape;
      total += batch_loss(tape, data, idx, {}).value().item() * static_cast<double>(idx.size());
    });
    return {total / static_cast<double>(data.size()), 0.0};
  }

  MetricReport evaluate(DataSplit split) override {
    const auto& data = p_->split[static_cast<int>(split)];
    require(!data.empty(), ErrorCode::kEmptyInput, "evaluation split is empty");
    MetricReport report;
    if (p_->is_ner()) {
      std::vector<std::vector<std::string>> pred, gold;
      for_chunks(data.size(), [&](std::span<const std::size_t> idx) {
        Tape<float> tape;
        const auto emissions = ner_emissions(tape, data, idx, {});
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const Example& e = data[idx[i]];
          std::vector<std::string> tags(e.words.size(), "O");
          if (!e.tag_ids.empty()) {
            const auto path = crf_viterbi(TagLattice<float>{emissions[i].value(), transitions_.value}).tags;
            for (std::size_t w = 0; w < path.size(); ++w) tags[w] = p_->tags.name(path[w]);
          }
          pred.push_back(std::move(tags));
          gold.push_back(e.gold_tags);
        }
      });
      report = entity_f1(pred, gold);
    } else {
      std::vector<LabelSet> pred, gold;
      std::vector<int> pred_bin, gold_bin;
      for_chunks(data.size(), [&](std::span<const std::size_t> idx) {
        Tape<float> tape;
        const Tensor<float> logits = classification_logits(tape, data, idx, {}).value();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const Example& e = data[idx[i]];
          LabelSet ps, gs;
          for (std::size_t l = 0; l < p_->labels.size(); ++l) {
            const double prob = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.at(i, l))));
            if (prob >= p_->settings.threshold) ps.push_back(p_->labels[l]);
            if (e.targets[l] == 1.0f) gs.push_back(p_->labels[l]);
          }
          pred_bin.push_back(!ps.empty());
          gold_bin.push_back(!gs.empty());
          pred.push_back(std::move(ps));
          gold.push_back(std::move(gs));
        }
      });
      report = p_->kind == TaskKind::kHierBinary ? accuracy(pred_bin, gold_bin) : micro_f1(pred, gold);
    }
    report.task = std::string(to_string(p_->kind));
    return report;
  }

  void remember_best() override {
    best_.clear();
    for (auto* q : all_parameters()) best_.push_back(q->value);
  }

  void restore_best() override {
    if (best_.empty()) return;
    auto params = all_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_[i];
  }

  Checkpoint export_checkpoint() const override {
    Checkpoint c = p_->base;
    for (const auto* q : encoder_.parameters()) c.tensors.push_back({q->name, q->value});
    for (const Parameter<float>* q : {&head_.weight, &head_.bias}) c.tensors.push_back({q->name, q->value});
    if (p_->is_hier())
      for (const Parameter<float>* q : {&pooler_.weight, &pooler_.bias, &pooler_.context})
        c.tensors.push_back({q->name, q->value});
    if (p_->is_ner()) c.tensors.push_back({transitions_.name, transitions_.value});
    c.state["task.kind"] = std::string(to_string(p_->kind));
    c.state["task.labels"] = json_list(p_->labels);
    return c;
  }

  void import_checkpoint(const Checkpoint& c) {
    require(c.state.count("task.kind") && c.state.at("task.kind") == to_string(p_->kind),
            ErrorCode::kConfigMismatch, "fine-tuned checkpoint was trained for a different task kind");
    require(c.state.at("task.labels") == json_list(p_->labels), ErrorCode::kConfigMismatch,
            "fine-tuned checkpoint label set differs from the task data");
    for (auto* q : all_parameters()) {
      const Tensor<float>* t = c.find(q->name);
      require(t != nullptr && t->shape() == q->value.shape(), ErrorCode::kConfigMismatch,
              "fine-tuned checkpoint lacks a compatible tensor " + q->name);
      q->value = *t;
    }
  }

 private:
  std::vector<Parameter<float>*> all_parameters() {
    std::vector<Parameter<float>*> out = encoder_.parameters();
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    if (p_->is_hier())
      for (auto* q : pooler_.parameters()) out.push_back(q);
    if (p_->is_ner()) out.push_back(&transitions_);
    return out;
  }

  template <class Fn>
  void for_chunks(std::size_t n, Fn fn) const {
    std::vector<std::size_t> idx;
    for (std::size_t at = 0; at < n; at += p_->settings.eval_batch) {
      idx.clear();
      for (std::size_t i = at; i < std::min(n, at + p_->settings.eval_batch); ++i) idx.push_back(i);
      fn(std::span<const std::size_t>(idx));
    }
  }

  EncoderBatch frame(const std::vector<Example>& data, std::span<const std::size_t> idx) const {
    std::size_t longest = 0;
    for (auto i : idx) longest = std::max(longest, data[i].segments[0].size());
    std::vector<EncodedPair> pairs;
    for (auto i : idx) pairs.push_back(frame_pair(data[i].segments[0], std::nullopt, longest + 2));
    return EncoderBatch::from_pairs(pairs, encoder_.vocab_fingerprint());
  }

  // [batch, L]
  Var<float> classification_logits(Tape<float>& tape, const std::vector<Example>& data,
                                   std::span<const std::size_t> idx, const ForwardOptions& opts) {
    if (!p_->is_hier()) return multilabel_logits(tape, encoder_.forward(tape, frame(data, idx), opts).cls, head_);
    std::vector<Var<float>> rows;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Example& e = data[idx[i]];
      std::size_t longest = 0;
      for (const auto& f : e.segments) longest = std::max(longest, f.size());
      std::vector<EncodedPair> facts;
      for (const auto& f : e.segments) facts.push_back(frame_pair(f, std::nullopt, longest + 2));
      ForwardOptions o = opts;
      o.dropout_seed = mix_seed(opts.dropout_seed, i);
      rows.push_back(multilabel_logits(tape, hier_encode(tape, encoder_, facts, pooler_, facts.size(), o).document, head_));
    }
    // Stack the [1, L] rows.
    std::vector<float> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.value().data().begin(), r.value().data().end());
    const std::size_t labels = p_->labels.size();
    std::vector<std::size_t> ids;
    for (const auto& r : rows) ids.push_back(r.id);
    return tape.record(Tensor<float>({rows.size(), labels}, std::move(flat)), ids,
                       [ids, labels](Tape<float>& t, std::size_t self) {
      const Tensor<float>& g = t.grad(self);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (!t.needs_grad(ids[r])) continue;
        Tensor<float>& d = t.grad(ids[r]);
        for (std::size_t l = 0; l < labels; ++l) d[l] += g.at(r, l);
      }
    });
  }

  // Per example [words kept, K].
  std::vector<Var<float>> ner_emissions(Tape<float>& tape, const std::vector<Example>& data,
                                        std::span<const std::size_t> idx, const ForwardOptions& opts) {
    std::size_t longest = 0;
    for (auto i : idx) longest = std::max(longest, data[i].pieces.pair.real_tokens());
    std::vector<EncodedPair> pairs;
    for (auto i : idx) {
      EncodedPair pair = data[i].pieces.pair;
      pair.ids.resize(longest);
      pair.segments.resize(longest);
      pair.attention_mask.resize(longest);
      pairs.push_back(std::move(pair));
    }
    const auto out = encoder_.forward(tape, EncoderBatch::from_pairs(pairs, encoder_.vocab_fingerprint()), opts);
    std::vector<Var<float>> result;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& first = data[idx[b]].pieces.first_subword;
      if (first.empty()) {
        result.push_back({});
        continue;
      }
      std::vector<std::size_t> rows;
      for (auto f : first) rows.push_back(b * longest + f);
      result.push_back(multilabel_logits(tape, gather_rows(out.hidden, std::span<const std::size_t>(rows)), head_));
    }
    return result;
  }

  Var<float> batch_loss(Tape<float>& tape, const std::vector<Example>& data, std::span<const std::size_t> idx,
                        const ForwardOptions& opts) {
    if (!p_->is_ner()) {
      Tensor<float> targets({idx.size(), p_->labels.size()});
      for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(data[idx[i]].targets.begin(), data[idx[i]].targets.end(), targets.row(i).begin());
      return multilabel_loss(classification_logits(tape, data, idx, opts), targets);
    }
    const auto emissions = ner_emissions(tape, data, idx, opts);
    Var<float> trans = tape.param(transitions_);
    std::optional<Var<float>> total;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (data[idx[i]].tag_ids.empty()) continue;
      Var<float> l = crf_nll(emissions[i], trans, data[idx[i]].tag_ids);
      total = total ? slab::add(*total, l) : l;
    }
    if (!total) return tape.constant(Tensor<float>::scalar(0.0f));
    return scale(*total, 1.0 / static_cast<double>(idx.size()));
  }

  std::shared_ptr<const Prepared> p_;
  Encoder<float> encoder_;
  MultiLabelHead<float> head_;
  HierPooler<float> pooler_;
  Parameter<float> transitions_;
  std::vector<Parameter<float>*> trainable_;
  AdamState<float> adam_;
  AdamState<float> crf_adam_;
  std::vector<Tensor<float>> best_;
};

}  // namespace

std::unique_ptr<TrialModel> EncoderTask::instantiate(const TrialConfig& config) const {
  return std::make_unique<EncoderTaskModel>(prepared_, config.point.dropout, config.seed);
}

std::unique_ptr<TaskModel> EncoderTask::load(const Checkpoint& finetuned) const {
  auto model = std::make_unique<EncoderTaskModel>(prepared_, 0.0, 0);
  model->import_checkpoint(finetuned);
  return model;
}

}  // namespace slab
