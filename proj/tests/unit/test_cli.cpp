#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cli_app.hpp"
#include "doctest.h"
#include "slab/cli/commands.hpp"
#include "slab/cli/config.hpp"
#include "slab/cli/synth.hpp"
#include "slab/cli/tasks.hpp"
#include "slab/error.hpp"
#include "slab/numerics/rng.hpp"
#include "slab/util/io.hpp"
#include "unit/support.hpp"

using namespace slab;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

struct CliResult {
  int status = 0;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "slab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.status = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> glyphs{"a", "b", "c", " ", "\"", "\\", "/", "\t", "{", "}", "[", ",", ":", "é", "✓"};
  std::string s;
  for (std::size_t n = rng.uniform_int(12); n > 0; --n) s += glyphs[rng.uniform_int(glyphs.size())];
  return s;
}

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return out;
}

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    if (!w.empty() && w.back() == '.') w.pop_back();
    out.push_back(w);
  }
  return out;
}

}  // namespace

TEST_CASE("RunConfig: defaults < file < flags") {
  const fs::path dir = test::scratch_dir("cli_config");
  write_file_atomic(dir / "run.cfg", "# comment line\n\nlr = 3e-5   # trailing comment\nbatch-size=8\nseeds = 1, 2 ,3\n");

  RunConfig c;
  CHECK(c.text("lr") == "2e-5");
  CHECK(c.origin("lr") == "default");
  c.merge_file(dir / "run.cfg");
  CHECK(c.number("lr") == 3e-5);
  CHECK(c.count("batch-size") == 8);
  CHECK(c.list("seeds") == std::vector<std::string>{"1", "2", "3"});
  CHECK(c.origin("batch-size").find("run.cfg") != std::string::npos);
  c.set("batch-size", "32");
  CHECK(c.count("batch-size") == 32);
  CHECK(c.origin("batch-size") == "flag");

  const std::vector<std::string> keys{"lr", "batch-size", "seeds"};
  write_file_atomic(dir / "echo.cfg", c.echo(keys));
  RunConfig replay;
  replay.merge_file(dir / "echo.cfg");
  for (const auto& k : keys) CHECK(replay.text(k) == c.text(k));
  CHECK(c.echo(keys) == "batch-size=32\nlr=3e-5\nseeds=1, 2 ,3\n");
}

TEST_CASE("RunConfig rejects unknown keys and bad values") {
  const fs::path dir = test::scratch_dir("cli_config_bad");
  RunConfig c;
  CHECK(code_of([&] { c.set("learning-rate", "1"); }) == ErrorCode::kInvalidArgument);
  write_file_atomic(dir / "unknown.cfg", "lr = 1e-5\nbogus = 3\n");
  try {
    c.merge_file(dir / "unknown.cfg");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
    CHECK(std::string(e.what()).find("unknown.cfg:2") != std::string::npos);
  }
  write_file_atomic(dir / "malformed.cfg", "lr 1e-5\n");
  CHECK(code_of([&] { c.merge_file(dir / "malformed.cfg"); }) == ErrorCode::kParse);
  CHECK(code_of([&] { c.merge_file(dir / "missing.cfg"); }) == ErrorCode::kIo);

  c.set("batch-size", "-1");
  CHECK(code_of([&] { c.count("batch-size"); }) == ErrorCode::kInvalidArgument);
  c.set("lr", "fast");
  CHECK(code_of([&] { c.number("lr"); }) == ErrorCode::kInvalidArgument);
  c.set("nsp", "maybe");
  CHECK(code_of([&] { c.flag("nsp"); }) == ErrorCode::kInvalidArgument);
  c.set("nsp", "off");
  CHECK(!c.flag("nsp"));
}

TEST_CASE("every command key is a known setting") {
  for (const CommandInfo& cmd : command_table()) {
    for (const auto& k : cmd.keys) CHECK_MESSAGE(find_key(k) != nullptr, cmd.name << " uses " << k);
    for (const auto& k : cmd.required)
      CHECK(std::find(cmd.keys.begin(), cmd.keys.end(), k) != cmd.keys.end());
    CHECK(std::find(cmd.keys.begin(), cmd.keys.end(), "out") != cmd.keys.end());
  }
  CHECK(command_table().size() == 9);
}

TEST_CASE("task schemas round-trip") {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    TextRecord t{"t" + std::to_string(i), random_text(rng), {}};
    HierRecord h{"h" + std::to_string(i), {random_text(rng)}, {}};
    NerRecord n{"n" + std::to_string(i), {}, {}};
    for (std::size_t k = rng.uniform_int(4); k > 0; --k) {
      t.labels.push_back(random_text(rng));
      h.facts.push_back(random_text(rng));
      h.labels.push_back("c" + std::to_string(k));
      n.tokens.push_back("w" + random_text(rng));
      n.tags.push_back(k % 2 ? "B-PER" : "O");
    }
    CHECK(parse_text_record(emit_record(t)) == t);
    CHECK(parse_hier_record(emit_record(h)) == h);
    CHECK(parse_ner_record(emit_record(n)) == n);
  }
  CHECK(code_of([] { parse_ner_record(R"({"id":"x","tokens":["a"],"tags":[]})"); }) == ErrorCode::kParse);
  CHECK(code_of([] { parse_text_record("not json"); }) == ErrorCode::kParse);
}

TEST_CASE("synthetic tasks are deterministic and solvable by construction") {
  SynthSpec spec;
  spec.task_records = 120;
  spec.docs_per_domain = 20;

  SUBCASE("multilabel labels follow keywords") {
    const auto splits = generate_multilabel(spec);
    CHECK(splits.train.size() + splits.dev.size() + splits.test.size() == 120);
    std::vector<TextRecord> all = splits.train;
    all.insert(all.end(), splits.dev.begin(), splits.dev.end());
    all.insert(all.end(), splits.test.begin(), splits.test.end());
    for (std::size_t j = 0; j < spec.num_labels; ++j) {
      const std::string label = "c" + std::to_string(j);
      std::set<std::string> negative_words;
      for (const auto& r : all)
        if (std::find(r.labels.begin(), r.labels.end(), label) == r.labels.end())
          for (const auto& w : words_of(r.text)) negative_words.insert(w);
      // Every positive record contains a word that never occurs without the label.
      for (const auto& r : all)
        if (std::find(r.labels.begin(), r.labels.end(), label) != r.labels.end()) {
          const auto words = words_of(r.text);
          CHECK(std::any_of(words.begin(), words.end(), [&](const auto& w) { return !negative_words.count(w); }));
        }
    }
    CHECK(generate_multilabel(spec).train == splits.train);
  }

  SUBCASE("hierarchical records hold 1..N facts") {
    spec.max_facts = 5;
    const auto splits = generate_hierarchical(spec, false);
    std::set<std::size_t> sizes;
    for (const auto& r : splits.train) {
      CHECK(!r.facts.empty());
      CHECK(r.facts.size() <= 5);
      sizes.insert(r.facts.size());
    }
    CHECK(sizes.size() == 5);
    for (const auto& r : generate_hierarchical(spec, true).train) CHECK(r.labels.size() <= 1);
  }

  SUBCASE("ner entity words keep one type") {
    const auto splits = generate_ner(spec);
    std::map<std::string, std::string> type_of;
    for (const auto& r : splits.train)
      for (std::size_t i = 0; i < r.tokens.size(); ++i) {
        const std::string type = r.tags[i] == "O" ? "O" : r.tags[i].substr(2);
        const auto [it, fresh] = type_of.emplace(r.tokens[i], type);
        CHECK_MESSAGE(it->second == type, r.tokens[i]);
      }
  }

  SUBCASE("degenerate grammars are rejected") {
    spec.domains.clear();
    CHECK(code_of([&] { validate(spec); }) == ErrorCode::kInvalidArgument);
    spec.domains = {"a"};
    spec.words_per_class = 0;
    CHECK(code_of([&] { validate(spec); }) == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("cli: usage and validation failures exit 2 and write nothing") {
  const fs::path dir = test::scratch_dir("cli_errors");
  const std::string out = (dir / "run").string();

  auto r = cli({"pretrain", "--strategy", "sc", "--corpus", "/dev/null", "--out", out});
  CHECK(r.status == kExitValidation);
  CHECK(r.err.find("--vocab") != std::string::npos);
  CHECK(!fs::exists(out));

  write_file_atomic(dir / "corpus.txt", "alpha beta gamma\n");
  r = cli({"pretrain", "--corpus", (dir / "corpus.txt").string(), "--vocab", (dir / "novocab").string(), "--out", out});
  CHECK(r.status == kExitValidation);
  CHECK(r.err.find("vocabulary (from train-vocab) not found") != std::string::npos);

  CHECK(cli({"bench", "--no-such-flag", "1"}).status == kExitValidation);
  CHECK(cli({"frobnicate"}).status == kExitValidation);
  CHECK(cli({}).status == kExitValidation);
  CHECK(cli({"finetune", "--help"}).status == kExitOk);

  // Fails inside the command after staging started: nothing is left behind.
  r = cli({"train-vocab", "--corpus", (dir / "corpus.txt").string(), "--vocab-size", "100000", "--out", out});
  CHECK(r.status == kExitValidation);
  CHECK(!fs::exists(out));
  CHECK(!fs::exists(dir / ".run.partial"));

  fs::create_directories(out);
  r = cli({"gen-synth", "--out", out});
  CHECK(r.status == kExitValidation);
  CHECK(r.err.find("already exists") != std::string::npos);

  write_file_atomic(dir / "bad.cfg", "nonsense = 1\n");
  CHECK(cli({"gen-synth", "--config", (dir / "bad.cfg").string(), "--out", (dir / "x").string()}).status ==
        kExitValidation);
}

TEST_CASE("cli: desk pipeline end to end") {
  const fs::path dir = test::scratch_dir("cli_pipeline");
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  auto ok = [](const CliResult& r) {
    INFO(r.err);
    REQUIRE(r.status == kExitOk);
  };

  ok(cli({"gen-synth", "--docs-per-domain", "40", "--task-records", "60", "--seed", "3", "--out", p("synth")}));
  ok(cli({"gen-synth", "--config", p("synth/config.txt"), "--out", p("synth2")}));
  auto synth = files_under(p("synth")), replay = files_under(p("synth2"));
  CHECK(synth.erase("config.txt") == 1);
  CHECK(replay.erase("config.txt") == 1);
  CHECK(synth == replay);

  const std::string corpus = p("synth/corpus/a.txt") + "," + p("synth/corpus/b.txt");
  ok(cli({"train-vocab", "--corpus", corpus, "--vocab-size", "400", "--out", p("vocab")}));
  ok(cli({"ingest", "--manifest", p("synth/manifest.jsonl"), "--out", p("store")}));
  CHECK(read_lines(p("store/domains.csv")).size() == 3);

  const std::vector<std::string> pre{"pretrain", "--corpus",    p("store/store.jsonl"), "--vocab", p("vocab"),
                                     "--preset", "tiny",        "--max-positions",      "32",      "--seq-len",
                                     "32",       "--steps",     "6",                    "--pretrain-batch-size",
                                     "4",        "--dupe-factor", "1"};
  auto with = [](std::vector<std::string> base, std::vector<std::string> extra) {
    base.insert(base.end(), extra.begin(), extra.end());
    return base;
  };
  ok(cli(with(pre, {"--out", p("sc")})));
  const std::string ckpt = p("sc/checkpoints/step-00000006.ckpt");
  CHECK(fs::exists(ckpt));
  CHECK(read_lines(p("sc/loss.csv")).size() == 7);

  // FP with another vocabulary surfaces the fingerprint error verbatim.
  ok(cli({"train-vocab", "--corpus", p("synth/corpus/a.txt"), "--vocab-size", "300", "--out", p("vocab_a")}));
  auto r = cli({"pretrain", "--strategy", "fp", "--parent", ckpt, "--corpus", p("store/store.jsonl"), "--vocab",
                p("vocab_a"), "--seq-len", "32", "--steps", "2", "--pretrain-batch-size", "4", "--out", p("fp")});
  CHECK(r.status == kExitValidation);
  CHECK(r.err.find("vocabulary fingerprint mismatch: parent checkpoint " + ckpt + " was trained with") !=
        std::string::npos);
  CHECK(!fs::exists(p("fp")));

  const std::vector<std::string> task{"--data", p("synth/task/multilabel"), "--vocab", p("vocab"), "--max-len", "32"};
  ok(cli(with(with({"finetune", "--checkpoint", ckpt, "--lr", "1e-3", "--batch-size", "8", "--epochs", "2"}, task),
              {"--out", p("ft")})));
  CHECK(read_lines(p("ft/epochs.csv")).size() == 3);
  ok(cli(with(with({"eval", "--checkpoint", p("ft/model.ckpt"), "--split", "dev"}, task), {"--out", p("ev")})));
  const auto ft_metrics = read_file(p("ft/metrics.txt"));
  const auto ev_metrics = read_file(p("ev/metrics.txt"));
  CHECK(ft_metrics.substr(0, ev_metrics.size()) == ev_metrics);

  ok(cli(with(with({"grid-search", "--checkpoint", ckpt, "--grid-lrs", "1e-3", "--grid-batch-sizes", "8,16",
                    "--grid-epochs", "1", "--seeds", "0,1"},
                   task),
              {"--out", p("grid")})));
  CHECK(read_lines(p("grid/trials.csv")).size() == 5);
  CHECK(read_file(p("grid/best_config.txt")).find("status=ok") != std::string::npos);

  ok(cli({"perplexity", "--checkpoint", ckpt, "--vocab", p("vocab"), "--texts", p("synth/corpus/b.txt"), "--rounds",
          "1", "--out", p("ppl")}));
  CHECK(read_file(p("ppl/perplexity.txt")).rfind("perplexity=", 0) == 0);

  ok(cli({"bench", "--presets", "tiny", "--reference", "tiny", "--budget-mb", "64", "--bench-seq-len", "8",
          "--bench-repetitions", "1", "--out", p("bench")}));
  CHECK(read_lines(p("bench/bench.csv")).size() == 2);
  CHECK(fs::exists(p("bench/memory_formula.txt")));

  for (const char* run : {"synth", "vocab", "store", "sc", "ft", "ev", "grid", "ppl", "bench"}) {
    CHECK(fs::exists(dir / run / "config.txt"));
    CHECK(fs::exists(dir / run / "inputs.txt"));
  }
  CHECK(read_file(p("ft/inputs.txt")).find("checkpoint " + ckpt + " sha256=") != std::string::npos);
}
