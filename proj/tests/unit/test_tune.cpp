#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "slab/cli/synth.hpp"
#include "slab/encoder/checkpoint.hpp"
#include "slab/error.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/tune/constructed.hpp"
#include "slab/tune/finetune.hpp"
#include "slab/tune/grid.hpp"

using namespace slab;

namespace {

// Dev losses and metrics follow a script; training losses are 1 unless the
// script marks the epoch as diverging.
class ScriptedTask : public FineTuneTask {
 public:
  ScriptedTask(std::vector<double> losses, std::vector<double> metrics, int diverge_at = 0)
      : losses_(std::move(losses)), metrics_(std::move(metrics)), diverge_at_(diverge_at) {}
  std::string id() const override { return "scripted"; }
  std::string metric_name() const override { return "metric"; }
  std::unique_ptr<TrialModel> instantiate(const TrialConfig& config) const override {
    return std::make_unique<Model>(*this, config);
  }

 private:
  struct Model : TrialModel {
    Model(const ScriptedTask& t, const TrialConfig& c) : task(t), config(c) {}
    std::size_t train_size() const override { return 8; }
    double train_step(std::span<const std::size_t>, double, std::uint64_t) override {
      return epoch + 1 == task.diverge_at_ ? NAN : 1.0;
    }
    Evaluation evaluate_dev() override {
      const auto e = static_cast<std::size_t>(epoch++);
      const double scale = config.point.learning_rate * 1e5;
      return {e < task.losses_.size() ? task.losses_[e] : task.losses_.back() - 1e-3 * static_cast<double>(e),
              e < task.metrics_.size() ? task.metrics_[e] * scale : 0.0};
    }
    void remember_best() override { best = epoch; }
    void restore_best() override { restored = best; }
    const ScriptedTask& task;
    TrialConfig config;
    int epoch = 0, best = 0, restored = -1;
  };
  std::vector<double> losses_, metrics_;
  int diverge_at_;
};

Checkpoint random_checkpoint(const Vocab& vocab, std::uint64_t seed) {
  EncoderConfig c = preset_config("tiny", vocab.size());
  c.max_positions = 64;
  Encoder<float> model(c, seed);
  model.set_vocab_fingerprint(vocab.fingerprint());
  return snapshot(model, {Strategy::kSc, "", 0}, 0);
}

struct SynthTask {
  Vocab vocab;
  TaskData data;
};

SynthTask synth_task(TaskKind kind, std::size_t records) {
  SynthSpec spec;
  spec.domains = {"a"};
  spec.docs_per_domain = 60;
  spec.task = kind;
  spec.task_domain = 0;
  spec.task_records = records;
  spec.num_labels = 3;
  spec.max_facts = 3;
  spec.min_sentences = 1;
  spec.max_sentences = 2;
  spec.seed = 4;
  const auto corpora = generate_corpora(spec);
  TaskData data;
  data.kind = kind;
  switch (kind) {
    case TaskKind::kMultilabel: data.text = generate_multilabel(spec); break;
    case TaskKind::kNer: data.ner = generate_ner(spec); break;
    default: data.hier = generate_hierarchical(spec, kind == TaskKind::kHierBinary); break;
  }
  auto corpus = generate_corpora(spec)[0];
  for (auto& d : task_documents(spec)) corpus.push_back(std::move(d));
  return {Vocab::train(corpus, 600, 0), std::move(data)};
}

}  // namespace

TEST_CASE("enumerate_grid cardinalities and order") {
  const auto def = enumerate_grid(GridSpace::default_space());
  CHECK(def.size() == 16);
  CHECK(def.front() == TrialPoint{2e-5, 16, 0.1, 3});
  CHECK(def[1] == TrialPoint{2e-5, 16, 0.1, 4});
  CHECK(def[2] == TrialPoint{2e-5, 32, 0.1, 3});
  CHECK(def.back() == TrialPoint{5e-5, 32, 0.1, 4});
  const auto exp = enumerate_grid(GridSpace::expanded_space());
  CHECK(exp.size() == 40);
  CHECK(exp.front() == TrialPoint{1e-5, 4, 0.1, 0});
  CHECK(exp[1] == TrialPoint{1e-5, 4, 0.2, 0});
  CHECK(exp.back() == TrialPoint{5e-5, 32, 0.2, 0});
  CHECK(enumerate_grid(GridSpace{{1e-4}, {2}, {0.0}, {1}, false}).size() == 1);
  CHECK_THROWS_AS(enumerate_grid(GridSpace{{}, {2}, {0.0}, {1}, false}), Error);
  CHECK_THROWS_AS(enumerate_grid(GridSpace{{1e-4}, {2}, {0.0}, {1}, true}), Error);
  CHECK_THROWS_AS(enumerate_grid(GridSpace{{1e-4}, {2}, {0.0}, {}, false}), Error);
}

TEST_CASE("early stopping rule traces") {
  EarlyStopper s;
  for (double l : {1.0, 0.9, 0.95, 0.97}) {
    s.update(l);
    CHECK(!s.stop());
  }
  s.update(0.99);
  CHECK(s.stop());
  CHECK(s.epochs() == 5);
  CHECK(s.best_epoch() == 2);

  EarlyStopper down;
  double l = 1.0;
  while (!down.stop()) down.update(l *= 0.9);
  CHECK(down.epochs() == kSafetyCap);
  CHECK(down.best_epoch() == kSafetyCap);
}

TEST_CASE("run_trial follows the early-stopping contract") {
  ScriptedTask task({1.0, 0.9, 0.95, 0.97, 0.99}, {0.1, 0.8, 0.5, 0.4, 0.3});
  TrialConfig config{{1e-5, 4, 0.1, 0}, 1, "scripted", ""};
  std::unique_ptr<TrialModel> model;
  const auto r = run_trial(task, config, &model);
  CHECK(r.status == TrialStatus::kOk);
  CHECK(r.stop_epoch == 5);
  CHECK(r.best_epoch == 2);
  CHECK(r.best_dev_loss == 0.9);
  CHECK(r.dev_metric == doctest::Approx(0.8));
  CHECK(r.epochs.size() == 5);
  for (const auto& e : r.epochs) CHECK(e.dev_loss >= r.best_dev_loss);

  config.point.epochs = 3;
  const auto fixed = run_trial(task, config);
  CHECK(fixed.stop_epoch == 3);
  CHECK(fixed.best_epoch == 2);

  ScriptedTask falling({1.0}, {0.5});
  config.point.epochs = 0;
  const auto capped = run_trial(falling, config);
  CHECK(capped.stop_epoch == kSafetyCap);
  CHECK(capped.best_epoch == kSafetyCap);

  ScriptedTask diverging({1.0, 0.9}, {0.5, 0.6}, 2);
  const auto failed = run_trial(diverging, config);
  CHECK(failed.status == TrialStatus::kFailed);
  CHECK(failed.stop_epoch == 2);
  CHECK(failed.failure.find("non-finite") != std::string::npos);
}

TEST_CASE("grid_search selection rules and report") {
  SUBCASE("single trial") {
    ScriptedTask task({1.0, 0.9}, {0.3, 0.4});
    const std::vector<std::uint64_t> seeds{7};
    const auto r = grid_search(task, GridSpace{{1e-5}, {4}, {0.1}, {2}, false}, seeds);
    REQUIRE(r.best);
    CHECK(*r.best == 0);
    CHECK(r.best_mean_metric == doctest::Approx(0.4));
  }
  SUBCASE("tie goes to the smaller batch, then the lower learning rate") {
    ScriptedTask task({1.0}, {0.0});
    const std::vector<std::uint64_t> seeds{1, 2};
    const auto r = grid_search(task, GridSpace{{1e-5, 2e-5}, {16, 8}, {0.1}, {1}, false}, seeds);
    REQUIRE(r.best);
    CHECK(r.points[*r.best] == TrialPoint{1e-5, 8, 0.1, 1});
    CHECK(r.trials.size() == 8);
  }
  SUBCASE("all failed") {
    ScriptedTask task({1.0}, {0.5}, 1);
    const std::vector<std::uint64_t> seeds{1};
    const auto r = grid_search(task, GridSpace{{1e-5, 2e-5}, {4}, {0.1}, {2}, false}, seeds);
    CHECK(r.all_failed);
    CHECK(!r.best);
    CHECK(r.best_config_text().find("status=all-failed") != std::string::npos);
    CHECK(r.trials_csv().find(",failed\n") != std::string::npos);
  }
  SUBCASE("report is deterministic and independent of worker count") {
    ScriptedTask task({1.0, 0.8, 0.9, 0.95, 0.97}, {0.2, 0.6, 0.5, 0.4, 0.1});
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    const auto a = grid_search(task, GridSpace::expanded_space(), seeds);
    const auto b = grid_search(task, GridSpace::expanded_space(), seeds, {4});
    CHECK(a.trials_csv() == b.trials_csv());
    CHECK(a.best_config_text() == b.best_config_text());
    CHECK(a.trials_csv().rfind("trial,seed,lr,batch,dropout,epochs,stop_epoch,best_dev_loss,dev_metric,status\n"
                               "0,1,1e-05,4,0.1,early,5,0.8,0.6,ok\n",
                               0) == 0);
    // Scripted metrics scale with lr, so the largest rate wins; then the smallest batch.
    CHECK(a.points[*a.best] == TrialPoint{5e-5, 4, 0.1, 0});
  }
}

TEST_CASE("constructed probe: only the lowest learning rate converges") {
  for (std::uint64_t seed : {0, 1, 2}) {
    UnstableProbeTask task(ProbeSpec{8, 2048, 256, 1.5e5, seed});
    CHECK(task.critical_learning_rate() > 1e-5);
    CHECK(task.critical_learning_rate() < 2e-5);
    const std::vector<std::uint64_t> seeds{seed};
    const auto expanded = grid_search(task, GridSpace::expanded_space(), seeds);
    REQUIRE(expanded.best);
    CHECK(expanded.points[*expanded.best].learning_rate == 1e-5);
    CHECK(expanded.best_mean_metric >= 0.9);
    for (const auto& t : expanded.trials)
      CHECK((t.status == TrialStatus::kOk) == (t.config.point.learning_rate == 1e-5));
    const auto def = grid_search(task, GridSpace::default_space(), seeds);
    CHECK(def.all_failed);
  }
}

TEST_CASE("select_variant and aggregate_runs") {
  CHECK(select_variant({{"only", {0.3, 10}}}) == "only");
  CHECK(select_variant({{"A", {0.8, 100}}, {"B", {0.8, 500}}}) == "A");
  CHECK(select_variant({{"A", {0.8, 500}}, {"B", {0.8, 100}}}) == "B");
  CHECK(select_variant({{"A", {0.7, 100}}, {"B", {0.9, 500}}, {"C", {0.85, 50}}}) == "B");
  CHECK_THROWS_AS(select_variant({}), Error);

  const std::vector<double> one{0.4};
  const auto a1 = aggregate_runs(one);
  CHECK((a1.min == 0.4 && a1.max == 0.4 && a1.mean == 0.4 && a1.runs == 1));
  const std::vector<double> three{0.5, 0.7, 0.9};
  const auto a3 = aggregate_runs(three);
  CHECK(a3.min == 0.5);
  CHECK(a3.max == 0.9);
  CHECK(a3.mean == doctest::Approx(0.7));
  Rng rng(1);
  std::vector<double> many(50);
  for (auto& v : many) v = rng.uniform();
  const auto base = aggregate_runs(many);
  for (int i = 0; i < 20; ++i) {
    rng.shuffle(std::span<double>(many));
    const auto s = aggregate_runs(many);
    CHECK((s.mean == base.mean && s.min == base.min && s.max == base.max));
    CHECK((s.min <= s.mean && s.mean <= s.max));
  }
}

TEST_CASE("encoder tasks: determinism, export and reload") {
  auto st = synth_task(TaskKind::kMultilabel, 40);
  const Checkpoint base = random_checkpoint(st.vocab, 3);
  FineTuneSettings settings;
  settings.max_len = 48;
  EncoderTask task("ml", base, st.vocab, st.data, settings);
  CHECK(task.metric_name() == "micro_f1");
  CHECK(task.labels() == std::vector<std::string>{"c0", "c1", "c2"});
  TrialConfig config{{1e-3, 8, 0.1, 2}, 5, task.id(), task.checkpoint_id()};
  std::unique_ptr<TrialModel> model;
  const auto a = run_trial(task, config, &model);
  const auto b = run_trial(task, config);
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
    CHECK(a.epochs[i].dev_loss == b.epochs[i].dev_loss);
  }
  auto* tm = dynamic_cast<TaskModel*>(model.get());
  REQUIRE(tm != nullptr);
  const Checkpoint exported = tm->export_checkpoint();
  const auto reloaded = task.load(exported);
  CHECK(reloaded->evaluate(DataSplit::kTest).value == tm->evaluate(DataSplit::kTest).value);
  CHECK(reloaded->evaluate_loss(DataSplit::kDev).loss == tm->evaluate_loss(DataSplit::kDev).loss);

  const Vocab other = Vocab::train(std::vector<std::string>{"unrelated words only"}, 20, 0);
  CHECK_THROWS_AS(EncoderTask("x", base, other, st.data, settings), Error);
}

TEST_CASE("crf tagger reaches entity F1 = 1 on a 50-sentence separable NER set") {
  auto st = synth_task(TaskKind::kNer, 63);
  st.data.ner.train.resize(50);
  const Checkpoint base = random_checkpoint(st.vocab, 5);
  FineTuneSettings settings;
  settings.max_len = 64;
  st.data.ner.dev = st.data.ner.train;
  EncoderTask task("ner", base, st.vocab, st.data, settings);
  CHECK(task.metric_name() == "entity_f1");
  const auto r = run_trial(task, {{1e-3, 2, 0.0, 0}, 1, task.id(), task.checkpoint_id()});
  CAPTURE(r.stop_epoch);
  CHECK(r.dev_metric == 1.0);
}

TEST_CASE("hierarchical tasks train and report their metric") {
  for (auto kind : {TaskKind::kHierBinary, TaskKind::kHierMultilabel}) {
    auto st = synth_task(kind, 30);
    const Checkpoint base = random_checkpoint(st.vocab, 6);
    FineTuneSettings settings;
    settings.max_len = 48;
    EncoderTask task("hier", base, st.vocab, st.data, settings);
    CHECK(task.metric_name() == (kind == TaskKind::kHierBinary ? "accuracy" : "micro_f1"));
    const auto r = run_trial(task, {{1e-3, 4, 0.1, 2}, 1, task.id(), task.checkpoint_id()});
    CHECK(r.status == TrialStatus::kOk);
    CHECK(r.epochs.size() == 2);
    CHECK((r.dev_metric >= 0.0 && r.dev_metric <= 1.0));
  }
}
