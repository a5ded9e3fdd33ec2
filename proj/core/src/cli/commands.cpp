#include "slab/cli/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "slab/cli/synth.hpp"
#include "slab/encoder/checkpoint.hpp"
#include "slab/evalbench/bench.hpp"
#include "slab/evalbench/perplexity.hpp"
#include "slab/pretrain/trainer.hpp"
#include "slab/tokenizer/vocab.hpp"
#include "slab/tune/finetune.hpp"
#include "slab/tune/grid.hpp"
#include "slab/util/hash.hpp"
#include "slab/util/io.hpp"

namespace fs = std::filesystem;

namespace slab {

int exit_code(const Error& e) { return is_validation_error(e.code()) ? kExitValidation : kExitRuntime; }

namespace {

const std::vector<std::string> kTaskKeys{"task",  "data",         "checkpoint", "vocab",     "max-len",   "max-facts",
                                         "seed",  "freeze-encoder", "crf-lr-scale", "threshold", "eval-batch", "out"};

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<CommandInfo> build_table() {
  return {
      {"gen-synth",
       "write synthetic domain corpora, a manifest and a task dataset",
       {"domains", "overlap", "docs-per-domain", "min-sentences", "max-sentences", "word-classes", "words-per-class",
        "templates", "follow-prob", "task", "task-domain", "task-records", "num-labels", "facts-per-doc",
        "train-fraction", "dev-fraction", "seed", "out"},
       {"out"}},
      {"train-vocab", "train a byte-level BPE vocabulary", {"corpus", "vocab-size", "seed", "out"}, {"corpus", "out"}},
      {"ingest", "fetch and verify manifest sources into a document store", {"manifest", "out"}, {"manifest", "out"}},
      {"pretrain",
       "pre-train an encoder (sc, fp or generic)",
       {"strategy", "corpus", "vocab", "parent", "preset", "max-positions", "steps", "pretrain-batch-size", "seq-len",
        "pretrain-lr", "schedule", "warmup-fraction", "nsp", "mask-rate", "dupe-factor", "emit-steps", "log-interval",
        "resume", "seed", "out"},
       {"corpus", "vocab", "out"}},
      {"finetune",
       "fine-tune a pre-trained checkpoint on a task",
       join(kTaskKeys, {"lr", "batch-size", "dropout", "epochs"}),
       {"data", "checkpoint", "vocab", "out"}},
      {"grid-search",
       "hyper-parameter grid search over fine-tuning runs",
       join(kTaskKeys,
            {"space", "seeds", "workers", "grid-lrs", "grid-batch-sizes", "grid-dropouts", "grid-epochs"}),
       {"data", "checkpoint", "vocab", "out"}},
      {"eval", "score a fine-tuned checkpoint on a split", join(kTaskKeys, {"split"}),
       {"data", "checkpoint", "vocab", "out"}},
      {"perplexity",
       "pseudo-perplexity of a checkpoint on texts",
       {"checkpoint", "vocab", "texts", "rounds", "mask-rate", "seed", "out"},
       {"checkpoint", "vocab", "texts", "out"}},
      {"bench",
       "memory-bounded batch sizes and relative throughput of encoder shapes",
       {"presets", "reference", "budget-mb", "bench-vocab-size", "bench-seq-len", "bench-steps", "bench-repetitions",
        "time-max-batch", "mask-rate", "seed", "out"},
       {"out"}},
  };
}

// Output directory written under a hidden sibling and renamed on commit.
class Staging {
 public:
  explicit Staging(fs::path final_dir) : final_(std::move(final_dir)) {
    if (final_.filename().empty()) final_ = final_.parent_path();
    require(!fs::exists(final_), ErrorCode::kInvalidArgument, "output directory " + final_.string() + " already exists");
    tmp_ = final_.parent_path() / ("." + final_.filename().string() + ".partial");
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  const fs::path& dir() const { return tmp_; }
  void commit() {
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

void require_file(const fs::path& p, const std::string& what) {
  require(fs::is_regular_file(p), ErrorCode::kInvalidArgument, what + " not found: " + p.string());
}

fs::path vocab_file(const RunConfig& c) { return c.path("vocab") / "vocab.txt"; }
fs::path merges_file(const RunConfig& c) { return c.path("vocab") / "merges.txt"; }

Vocab load_vocab(const RunConfig& c) { return Vocab::load(vocab_file(c), merges_file(c)); }

std::vector<std::uint64_t> seeds_of(const RunConfig& c) {
  std::vector<std::uint64_t> out;
  for (const auto& s : c.list("seeds")) out.push_back(static_cast<std::uint64_t>(parse_count("seeds", s)));
  require(!out.empty(), ErrorCode::kInvalidArgument, "--seeds: at least one seed is required");
  return out;
}

int parse_epochs(const std::string& key, const std::string& v) {
  if (v == "early") return 0;
  const std::size_t n = parse_count(key, v);
  require(n >= 1, ErrorCode::kInvalidArgument, "--" + key + ": expected a positive count or 'early', got '" + v + "'");
  return static_cast<int>(n);
}

FineTuneSettings settings_of(const RunConfig& c) {
  FineTuneSettings s;
  s.max_len = c.count("max-len");
  s.max_facts = c.count("max-facts");
  s.freeze_encoder = c.flag("freeze-encoder");
  s.crf_lr_scale = c.number("crf-lr-scale");
  s.threshold = c.number("threshold");
  s.eval_batch = c.count("eval-batch");
  return s;
}

std::string report_text(const MetricReport& r, std::string_view split) {
  std::ostringstream o;
  o << "split=" << split << "\ntask=" << r.task << "\nmetric=" << r.metric << "\nvalue=" << format_double(r.value)
    << "\ntp=" << r.tp << "\nfp=" << r.fp << "\nfn=" << r.fn << "\nprecision=" << format_double(r.precision)
    << "\nrecall=" << format_double(r.recall) << '\n';
  return o.str();
}

DataSplit parse_split(const std::string& s) {
  if (s == "train") return DataSplit::kTrain;
  if (s == "dev") return DataSplit::kDev;
  if (s == "test") return DataSplit::kTest;
  fail(ErrorCode::kInvalidArgument, "--split: expected train, dev or test, got '" + s + "'");
}

struct Inputs {
  std::vector<std::pair<std::string, fs::path>> files;
  void add(const std::string& key, const fs::path& p) { files.emplace_back(key, p); }
  std::string text() const {
    std::string out;
    for (const auto& [key, p] : files) out += key + " " + p.string() + " sha256=" + sha256_hex(read_file(p)) + "\n";
    return out;
  }
};

std::string task_stem_name(const fs::path& stem) { return stem.filename().string(); }

std::vector<fs::path> task_files(const fs::path& stem) {
  return {split_path(stem, "train"), split_path(stem, "dev"), split_path(stem, "test")};
}

void write_run_files(const fs::path& dir, const CommandInfo& cmd, const RunConfig& c, const Inputs& in) {
  write_file_atomic(dir / "config.txt", "# slab " + cmd.name + "\n" + c.echo(cmd.keys));
  write_file_atomic(dir / "inputs.txt", in.text());
}

int gen_synth(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  SynthSpec spec;
  spec.domains = c.list("domains");
  spec.overlap = c.number("overlap");
  spec.docs_per_domain = c.count("docs-per-domain");
  spec.min_sentences = c.count("min-sentences");
  spec.max_sentences = c.count("max-sentences");
  spec.word_classes = c.count("word-classes");
  spec.words_per_class = c.count("words-per-class");
  spec.templates = c.count("templates");
  spec.follow_prob = c.number("follow-prob");
  spec.task = parse_task_kind(c.text("task"));
  spec.task_domain = c.count("task-domain");
  spec.task_records = c.count("task-records");
  spec.num_labels = c.count("num-labels");
  spec.max_facts = c.count("facts-per-doc");
  spec.train_fraction = c.number("train-fraction");
  spec.dev_fraction = c.number("dev-fraction");
  spec.seed = static_cast<std::uint64_t>(c.count("seed"));
  validate(spec);
  const SynthFiles files = write_synth(spec, out);
  log << "wrote " << files.corpora.size() << " corpora and task " << to_string(spec.task) << '\n';
  return kExitOk;
}

int train_vocab(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  std::vector<std::string> texts;
  for (const Document& d : load_documents(c.list("corpus"))) texts.push_back(d.text);
  const Vocab vocab = Vocab::train(texts, c.count("vocab-size"), static_cast<std::uint64_t>(c.count("seed")));
  vocab.save(out / "vocab.txt", out / "merges.txt");
  log << "vocabulary of " << vocab.size() << " tokens, fingerprint " << vocab.fingerprint() << '\n';
  return kExitOk;
}

int ingest_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  const fs::path manifest = c.path("manifest");
  const IngestReport report = ingest(read_manifest(manifest), manifest.parent_path(), out / "store.jsonl");
  write_file_atomic(out / "sources.csv", report.sources_csv());
  write_file_atomic(out / "domains.csv", report.domains_csv());
  log << "ingested " << report.total_docs << " documents (" << report.total_bytes << " bytes) from "
      << report.sources.size() << " sources\n";
  return kExitOk;
}

PretrainPlan plan_of(const RunConfig& c, const Vocab& vocab, const fs::path& out) {
  PretrainPlan plan;
  plan.strategy = parse_strategy(c.text("strategy"));
  plan.parent = c.path("parent");
  if (plan.strategy == Strategy::kFp)
    require(!c.empty("parent"), ErrorCode::kInvalidArgument,
            "pretrain: strategy fp needs a parent checkpoint (--parent)");
  else
    require(c.empty("parent"), ErrorCode::kInvalidArgument, "pretrain: --parent is only used with strategy fp");
  plan.config = preset_config(c.text("preset"), vocab.size());
  if (c.count("max-positions") > 0) plan.config.max_positions = c.count("max-positions");
  plan.total_steps = c.integer("steps");
  for (const auto& s : c.list("emit-steps")) plan.emit_steps.push_back(parse_integer("emit-steps", s));
  plan.batch_size = c.count("pretrain-batch-size");
  plan.seq_len = c.count("seq-len");
  plan.adam.learning_rate = c.number("pretrain-lr");
  plan.schedule = c.flag("schedule");
  plan.warmup_fraction = c.number("warmup-fraction");
  plan.nsp = c.flag("nsp");
  plan.mask_rate = c.number("mask-rate");
  plan.dupe_factor = c.count("dupe-factor");
  plan.log_interval = c.integer("log-interval");
  plan.seed = static_cast<std::uint64_t>(c.count("seed"));
  plan.out_dir = out;
  validate(plan);
  return plan;
}

int pretrain_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  const Vocab vocab = load_vocab(c);
  const PretrainPlan plan = plan_of(c, vocab, out);
  const auto docs = load_documents(c.list("corpus"));
  std::optional<fs::path> resume;
  if (!c.empty("resume")) resume = c.path("resume");
  const PretrainResult result = pretrain(plan, docs, vocab, resume);
  log << to_string(plan.strategy) << " pre-training wrote " << result.checkpoints.size() << " checkpoints; last "
      << result.checkpoints.back().filename().string() << '\n';
  return kExitOk;
}

EncoderTask task_of(const RunConfig& c, const Checkpoint& base, const Vocab& vocab) {
  const fs::path stem = c.path("data");
  return EncoderTask(task_stem_name(stem), base, vocab, TaskData::load(parse_task_kind(c.text("task")), stem),
                     settings_of(c));
}

int finetune_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  const Vocab vocab = load_vocab(c);
  const Checkpoint base = load_checkpoint(c.path("checkpoint"));
  const EncoderTask task = task_of(c, base, vocab);
  TrialConfig config;
  config.point = {c.number("lr"), c.count("batch-size"), c.number("dropout"), parse_epochs("epochs", c.text("epochs"))};
  config.seed = static_cast<std::uint64_t>(c.count("seed"));
  config.task_id = task.id();
  config.checkpoint_id = task.checkpoint_id();
  std::unique_ptr<TrialModel> trained;
  const TrialResult result = run_trial(task, config, &trained);
  require(result.status == TrialStatus::kOk, ErrorCode::kNonFinite, "finetune: training failed: " + result.failure);
  auto& model = dynamic_cast<TaskModel&>(*trained);

  std::ostringstream epochs;
  epochs << "epoch,train_loss,dev_loss,dev_metric\n";
  for (const EpochRecord& e : result.epochs)
    epochs << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.dev_loss) << ','
           << format_double(e.dev_metric) << '\n';
  write_file_atomic(out / "epochs.csv", epochs.str());
  save_checkpoint(model.export_checkpoint(), out / "model.ckpt");
  const MetricReport dev = model.evaluate(DataSplit::kDev);
  const MetricReport test = model.evaluate(DataSplit::kTest);
  write_file_atomic(out / "metrics.txt", report_text(dev, "dev") + "\n" + report_text(test, "test"));
  log << task.id() << ": best epoch " << result.best_epoch << " of " << result.stop_epoch << ", dev " << dev.metric
      << ' ' << format_double(dev.value) << ", test " << format_double(test.value) << '\n';
  return kExitOk;
}

int grid_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  const Vocab vocab = load_vocab(c);
  const Checkpoint base = load_checkpoint(c.path("checkpoint"));
  const EncoderTask task = task_of(c, base, vocab);
  GridSpace space;
  if (c.text("space") == "default")
    space = GridSpace::default_space();
  else if (c.text("space") == "expanded")
    space = GridSpace::expanded_space();
  else
    fail(ErrorCode::kInvalidArgument, "--space: expected default or expanded, got '" + c.text("space") + "'");
  auto numbers = [&](const std::string& key) {
    std::vector<double> v;
    for (const auto& s : c.list(key)) v.push_back(parse_number(key, s));
    return v;
  };
  if (!c.empty("grid-lrs")) space.learning_rates = numbers("grid-lrs");
  if (!c.empty("grid-dropouts")) space.dropouts = numbers("grid-dropouts");
  if (!c.empty("grid-batch-sizes")) {
    space.batch_sizes.clear();
    for (const auto& b : c.list("grid-batch-sizes")) space.batch_sizes.push_back(parse_count("grid-batch-sizes", b));
  }
  if (!c.empty("grid-epochs")) {
    space.epochs.clear();
    space.early_stopping = false;
    for (const auto& e : c.list("grid-epochs")) {
      const int n = parse_epochs("grid-epochs", e);
      if (n == 0)
        space.early_stopping = true;
      else
        space.epochs.push_back(n);
    }
  }
  space.validate();
  const auto seeds = seeds_of(c);
  SearchOptions options;
  options.workers = std::max<std::size_t>(1, c.count("workers"));
  const GridReport report = grid_search(task, space, seeds, options);
  write_grid_report(report, out);
  if (report.all_failed) {
    log << task.id() << ": every trial failed\n";
    return kExitRuntime;
  }
  const TrialPoint& p = report.points[*report.best];
  log << task.id() << ": best lr " << format_double(p.learning_rate) << " batch " << p.batch_size << " dropout "
      << format_double(p.dropout) << " epochs " << (p.epochs > 0 ? std::to_string(p.epochs) : "early") << ", mean dev "
      << report.metric << ' ' << format_double(report.best_mean_metric) << '\n';
  return kExitOk;
}

int eval_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  const Vocab vocab = load_vocab(c);
  const Checkpoint finetuned = load_checkpoint(c.path("checkpoint"));
  const DataSplit split = parse_split(c.text("split"));
  const EncoderTask task = task_of(c, finetuned, vocab);
  const auto model = task.load(finetuned);
  const MetricReport r = model->evaluate(split);
  write_file_atomic(out / "metrics.txt", report_text(r, c.text("split")));
  log << task.id() << ' ' << c.text("split") << ' ' << r.metric << ' ' << format_double(r.value) << '\n';
  return kExitOk;
}

int perplexity_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  const Vocab vocab = load_vocab(c);
  Encoder<float> model = restore_encoder(load_checkpoint(c.path("checkpoint")));
  std::vector<std::string> texts;
  for (const Document& d : load_documents(c.list("texts"))) texts.push_back(d.text);
  PerplexityOptions options;
  options.rounds = c.count("rounds");
  options.seed = static_cast<std::uint64_t>(c.count("seed"));
  options.mask_rate = c.number("mask-rate");
  const double ppl = pseudo_perplexity(model, vocab, texts, options);
  write_file_atomic(out / "perplexity.txt",
                    "perplexity=" + format_double(ppl) + "\ntexts=" + std::to_string(texts.size()) + "\n");
  log << "pseudo-perplexity " << format_double(ppl) << " over " << texts.size() << " texts\n";
  return kExitOk;
}

int bench_cmd(const RunConfig& c, const fs::path& out, std::ostream& log, Inputs&) {
  BenchOptions options;
  options.presets = c.list("presets");
  options.reference = c.text("reference");
  const std::size_t mb = c.count("budget-mb");
  require(mb < (std::size_t{1} << 40), ErrorCode::kInvalidArgument, "--budget-mb: too large");
  options.budget_bytes = mb << 20;
  options.vocab_size = c.count("bench-vocab-size");
  options.workload.seq_len = c.count("bench-seq-len");
  options.workload.steps = c.count("bench-steps");
  options.workload.repetitions = c.count("bench-repetitions");
  options.workload.mask_rate = c.number("mask-rate");
  options.workload.seed = static_cast<std::uint64_t>(c.count("seed"));
  options.time_max_batch = c.flag("time-max-batch");
  const auto rows = bench(options);
  write_file_atomic(out / "bench.csv", bench_csv(rows));
  write_file_atomic(out / "bench_noise.csv", bench_noise_csv(rows));
  write_file_atomic(out / "memory_formula.txt", memory_formula());
  log << bench_csv(rows);
  return kExitOk;
}

using Runner = int (*)(const RunConfig&, const fs::path&, std::ostream&, Inputs&);

Runner runner_for(std::string_view name) {
  if (name == "gen-synth") return gen_synth;
  if (name == "train-vocab") return train_vocab;
  if (name == "ingest") return ingest_cmd;
  if (name == "pretrain") return pretrain_cmd;
  if (name == "finetune") return finetune_cmd;
  if (name == "grid-search") return grid_cmd;
  if (name == "eval") return eval_cmd;
  if (name == "perplexity") return perplexity_cmd;
  if (name == "bench") return bench_cmd;
  fail(ErrorCode::kInvalidArgument, "unknown command '" + std::string(name) + "'");
}

// Input files named by the settings, checked to exist before any output.
Inputs collect_inputs(const CommandInfo& cmd, const RunConfig& c) {
  Inputs in;
  auto uses = [&](const std::string& key) { return std::find(cmd.keys.begin(), cmd.keys.end(), key) != cmd.keys.end(); };
  if (uses("vocab") && !c.empty("vocab")) {
    require_file(vocab_file(c), "vocabulary (from train-vocab)");
    require_file(merges_file(c), "vocabulary merges (from train-vocab)");
    in.add("vocab", vocab_file(c));
    in.add("vocab", merges_file(c));
  }
  for (const char* key : {"checkpoint", "parent", "manifest", "resume"})
    if (uses(key) && !c.empty(key)) {
      require_file(c.path(key), key);
      in.add(key, c.path(key));
    }
  for (const char* key : {"corpus", "texts"})
    if (uses(key))
      for (const auto& p : c.list(key)) {
        require_file(p, key);
        in.add(key, p);
      }
  if (uses("data") && !c.empty("data"))
    for (const auto& p : task_files(c.path("data"))) {
      require_file(p, "task split");
      in.add("data", p);
    }
  return in;
}

}  // namespace

const std::vector<CommandInfo>& command_table() {
  static const std::vector<CommandInfo> table = build_table();
  return table;
}

const CommandInfo* find_command(std::string_view name) {
  for (const auto& c : command_table())
    if (c.name == name) return &c;
  return nullptr;
}

std::vector<Document> load_documents(const std::vector<std::string>& paths) {
  std::vector<Document> docs;
  for (const auto& p : paths) {
    const fs::path path(p);
    if (path.extension() == ".jsonl") {
      for (auto& d : read_store(path)) docs.push_back(std::move(d));
      continue;
    }
    const std::string stem = path.stem().string();
    std::size_t n = 0;
    for (auto& line : read_lines(path)) {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      docs.push_back({stem + "-" + std::to_string(n++), stem, std::move(line)});
    }
  }
  return docs;
}

int run_command(std::string_view name, const RunConfig& config, std::ostream& log) {
  const CommandInfo* cmd = find_command(name);
  require(cmd != nullptr, ErrorCode::kInvalidArgument, "unknown command '" + std::string(name) + "'");
  for (const auto& key : cmd->required)
    require(!config.empty(key), ErrorCode::kInvalidArgument,
            cmd->name + ": missing required --" + key + " (" + find_key(key)->help + ")");
  const Runner run = runner_for(name);
  Inputs inputs = collect_inputs(*cmd, config);

  const bool resume = cmd->name == "pretrain" && !config.empty("resume");
  if (resume) {
    const fs::path out = config.path("out");
    require(fs::is_directory(out), ErrorCode::kInvalidArgument,
            "pretrain: --resume continues inside an existing --out, but " + out.string() + " does not exist");
    const int status = run(config, out, log, inputs);
    write_run_files(out, *cmd, config, inputs);
    return status;
  }
  Staging staging(config.path("out"));
  const int status = run(config, staging.dir(), log, inputs);
  write_run_files(staging.dir(), *cmd, config, inputs);
  staging.commit();
  return status;
}

}  // namespace slab
