#include <cmath>
#include <map>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "slab/cli/synth.hpp"
#include "slab/error.hpp"
#include "slab/pretrain/corpus.hpp"
#include "slab/pretrain/examples.hpp"
#include "slab/pretrain/trainer.hpp"
#include "slab/util/hash.hpp"
#include "slab/util/io.hpp"
#include "unit/support.hpp"

using namespace slab;

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

std::string lines_of(const std::string& prefix, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) out += prefix + " document number " + std::to_string(i) + ".\n";
  return out;
}

struct Fixture {
  std::vector<Document> docs;
  Vocab vocab;
};

Fixture small_fixture(std::uint64_t seed = 1, std::size_t domain = 0) {
  SynthSpec spec;
  spec.domains = {"a", "b"};
  spec.overlap = 0.5;
  spec.docs_per_domain = 40;
  spec.seed = seed;
  const auto corpora = generate_corpora(spec);
  std::vector<Document> docs;
  for (std::size_t i = 0; i < corpora[domain].size(); ++i)
    docs.push_back({"d" + std::to_string(i), spec.domains[domain], corpora[domain][i]});
  return {docs, Vocab::train(corpora[domain], 200, 0)};
}

PretrainPlan micro_plan(const Vocab& vocab, const std::filesystem::path& out, std::int64_t steps) {
  PretrainPlan plan;
  plan.config.preset = "micro";
  plan.config.layers = 1;
  plan.config.hidden = 32;
  plan.config.heads = 2;
  plan.config.intermediate = 64;
  plan.config.vocab_size = vocab.size();
  plan.config.max_positions = 32;
  plan.config.dropout = 0.1;
  plan.total_steps = steps;
  plan.batch_size = 4;
  plan.seq_len = 32;
  plan.dupe_factor = 2;
  plan.adam.learning_rate = 1e-3;
  plan.seed = 5;
  plan.out_dir = out;
  return plan;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const auto dir = test::scratch_dir("manifest");
  write_file_atomic(dir / "m.jsonl",
                    R"({"name":"x","source":"x.txt","domain":"legal","hash":"ab"})"
                    "\n\n"
                    R"({"name":"y","source":"y.txt","domain":"generic","size":12})"
                    "\n");
  const auto m = read_manifest(dir / "m.jsonl");
  REQUIRE(m.size() == 2);
  CHECK(m[0].hash == "ab");
  CHECK(m[1].expected_size == 12);
  write_file_atomic(dir / "dup.jsonl", R"({"name":"x","source":"a","domain":"d"})"
                                       "\n"
                                       R"({"name":"x","source":"b","domain":"d"})");
  CHECK(code_of([&] { read_manifest(dir / "dup.jsonl"); }) == ErrorCode::kInvalidArgument);
  write_file_atomic(dir / "bad.jsonl", R"({"name":"x"})");
  CHECK(code_of([&] { read_manifest(dir / "bad.jsonl"); }) == ErrorCode::kParse);
}

TEST_CASE("ingest: two local files of 10 documents") {
  const auto dir = test::scratch_dir("ingest");
  const std::string a = lines_of("alpha", 10), b = lines_of("beta beta", 10);
  write_file_atomic(dir / "a.txt", a);
  write_file_atomic(dir / "b.txt", "\n  " + b + "\n\n");
  std::vector<ManifestEntry> m{{"first", "a.txt", sha256_hex(a), "legal", 0}, {"second", "b.txt", "", "generic", 0}};
  const auto report = ingest(m, dir, dir / "store.jsonl");
  CHECK(report.total_docs == 20);
  REQUIRE(report.sources.size() == 2);
  CHECK(report.sources[0].docs == 10);
  CHECK(report.sources[1].docs == 10);
  CHECK(report.sources[0].share + report.sources[1].share == doctest::Approx(100.0));
  REQUIRE(report.domains.size() == 2);
  CHECK(report.domains[0].domain == "generic");
  const auto store = read_store(dir / "store.jsonl");
  CHECK(store.size() == 20);
  CHECK(store[0].domain == "legal");
  CHECK(store[10].text == "beta beta document number 0.");
  const std::string csv = report.sources_csv();
  CHECK(csv.rfind("name,domain,docs,bytes,share_pct\nfirst,legal,10,", 0) == 0);
  CHECK(report.domains_csv().rfind("domain,docs,bytes,share_pct\ngeneric,10,", 0) == 0);
}

TEST_CASE("ingest: error paths are distinct and write nothing") {
  const auto dir = test::scratch_dir("ingest_err");
  write_file_atomic(dir / "a.txt", lines_of("alpha", 3));
  write_file_atomic(dir / "empty.txt", "\n \n");
  std::vector<ManifestEntry> bad_hash{{"ok", "a.txt", "", "d", 0}, {"tampered", "a.txt", std::string(64, '0'), "d", 0}};
  try {
    ingest(bad_hash, dir, dir / "store.jsonl");
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kHashMismatch);
    CHECK(std::string(e.what()).find("tampered") != std::string::npos);
  }
  CHECK(!std::filesystem::exists(dir / "store.jsonl"));
  std::vector<ManifestEntry> missing{{"gone", "nope.txt", "", "d", 0}};
  CHECK(code_of([&] { ingest(missing, dir, dir / "store.jsonl"); }) == ErrorCode::kUnreachable);
  std::vector<ManifestEntry> empty{{"blank", "empty.txt", "", "d", 0}};
  CHECK(code_of([&] { ingest(empty, dir, dir / "store.jsonl"); }) == ErrorCode::kEmptyInput);
}

TEST_CASE("ingest: http source") {
  const auto dir = test::scratch_dir("ingest_http");
  const std::string body = lines_of("remote", 4);
  httplib::Server server;
  server.Get("/corpus.txt", [&](const httplib::Request&, httplib::Response& res) { res.set_content(body, "text/plain"); });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  std::vector<ManifestEntry> m{{"web", base + "/corpus.txt", sha256_hex(body), "web", 0}};
  const auto report = ingest(m, dir, dir / "store.jsonl");
  CHECK(report.total_docs == 4);
  std::vector<ManifestEntry> missing{{"web404", base + "/missing.txt", "", "web", 0}};
  CHECK(code_of([&] { ingest(missing, dir, dir / "store2.jsonl"); }) == ErrorCode::kUnreachable);
  server.stop();
  t.join();
}

TEST_CASE("mask_tokens: trivial cases") {
  std::vector<TokenId> ids{2, 10, 11, 12, 3, 0, 0};
  const auto none = mask_tokens(ids, 0.0, 1, 100);
  CHECK(none.ids == ids);
  CHECK(none.selected() == 0);
  for (auto l : none.labels) CHECK(l == kNoLabel);

  std::vector<TokenId> only_special{2, 3, 0, 0};
  CHECK(mask_tokens(only_special, 0.15, 1, 100).selected() == 0);
  CHECK(mask_tokens(ids, 0.15, 9, 100).ids == mask_tokens(ids, 0.15, 9, 100).ids);
}

TEST_CASE("mask_tokens: 1000-token stream statistics hold for every seed") {
  Rng rng(3);
  std::vector<TokenId> stream(1000);
  for (auto& t : stream) t = static_cast<TokenId>(rng.uniform_int(5, 499));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CAPTURE(seed);
    const auto m = mask_tokens(stream, 0.15, seed, 500);
    const double frac = static_cast<double>(m.selected()) / 1000.0;
    CHECK(frac >= 0.135);
    CHECK(frac <= 0.165);
    std::map<MaskAction, int> counts;
    for (auto a : m.actions) ++counts[a];
    const double n = static_cast<double>(m.selected());
    CHECK(std::abs(counts[MaskAction::kMask] / n - 0.8) <= 0.03);
    CHECK(std::abs(counts[MaskAction::kRandom] / n - 0.1) <= 0.03);
    CHECK(std::abs(counts[MaskAction::kKeep] / n - 0.1) <= 0.03);
  }
}

TEST_CASE("property: masking invariants on random framed sequences") {
  Rng rng(4);
  std::vector<int> action_hits(3, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<TokenId> a(static_cast<std::size_t>(rng.uniform_int(0, 30)));
    for (auto& t : a) t = static_cast<TokenId>(rng.uniform_int(5, 99));
    const auto pair = frame_pair(a, std::nullopt, 40);
    const auto m = mask_tokens(pair.ids, 0.15, rng.next_u64(), 100);
    const std::size_t real = pair.real_tokens();
    std::size_t labelled = 0;
    for (std::size_t i = 0; i < pair.ids.size(); ++i) {
      if (m.labels[i] == kNoLabel) {
        CHECK(m.ids[i] == pair.ids[i]);
        continue;
      }
      ++labelled;
      CHECK(!Vocab::is_special(pair.ids[i]));
      CHECK(m.labels[i] == pair.ids[i]);
      CHECK((m.ids[i] == special::kMask || !Vocab::is_special(m.ids[i])));
    }
    CHECK(labelled == m.selected());
    CHECK(m.selected() <= static_cast<std::size_t>(std::ceil(0.15 * static_cast<double>(real))));
    if (!a.empty()) CHECK(m.selected() >= 1);
    for (auto act : m.actions) ++action_hits[static_cast<int>(act)];
  }
  // Even one-token selections see all three actions in the right proportions.
  const double total = action_hits[0] + action_hits[1] + action_hits[2];
  CHECK(action_hits[0] / total == doctest::Approx(0.8).epsilon(0.05));
  CHECK(action_hits[1] / total == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("split_sentences keeps terminators") {
  const auto s = split_sentences("one two. three? four! tail");
  REQUIRE(s.size() == 4);
  CHECK(s[0] == "one two.");
  CHECK(s[1] == " three?");
  CHECK(s[3] == " tail");
}

TEST_CASE("build_examples contracts") {
  auto fx = small_fixture();
  const auto tok = tokenize_documents(fx.docs, fx.vocab);
  ExampleOptions opt;
  opt.seq_len = 48;
  opt.vocab_size = fx.vocab.size();
  opt.dupe_factor = 2;

  SUBCASE("no NSP: single segment") {
    opt.nsp = false;
    for (const auto& ex : build_examples(tok, opt, 0)) {
      CHECK(ex.pair.length() == 48);
      for (auto s : ex.pair.segments) CHECK(s == 0);
    }
  }
  SUBCASE("deterministic per seed and epoch") {
    CHECK(build_examples(tok, opt, 0) == build_examples(tok, opt, 0));
    CHECK(!(build_examples(tok, opt, 0) == build_examples(tok, opt, 1)));
  }
  SUBCASE("single document with NSP is rejected") {
    std::span<const TokenizedDocument> one(tok.data(), 1);
    CHECK(code_of([&] { build_examples(one, opt, 0); }) == ErrorCode::kInvalidArgument);
    opt.nsp = false;
    CHECK_NOTHROW(build_examples(one, opt, 0));
  }
}

TEST_CASE("build_examples: two-document store gives balanced NSP labels") {
  auto fx = small_fixture(2);
  std::vector<Document> two{fx.docs[0], fx.docs[1]};
  two[0].text.clear();
  two[1].text.clear();
  for (std::size_t i = 0; i < 20; ++i) two[0].text += fx.docs[2 * i].text + " ";
  for (std::size_t i = 0; i < 20; ++i) two[1].text += fx.docs[2 * i + 1].text + " ";
  const auto tok = tokenize_documents(two, fx.vocab);
  ExampleOptions opt;
  opt.seq_len = 32;
  opt.vocab_size = fx.vocab.size();
  opt.dupe_factor = 1;
  opt.seed = 0;
  std::vector<TrainingExample> all;
  for (std::uint64_t epoch = 0; all.size() < 1000; ++epoch) {
    auto ex = build_examples(tok, opt, epoch);
    all.insert(all.end(), ex.begin(), ex.end());
  }
  all.resize(1000);
  std::size_t not_next = 0;
  for (const auto& ex : all) {
    not_next += ex.nsp_label == kNotNext;
    CHECK(ex.pair.length() == 32);
    CHECK(ex.pair.real_tokens() <= 32);
  }
  CHECK(std::abs(static_cast<double>(not_next) / 1000.0 - 0.5) <= 0.05);
}

TEST_CASE("learning-rate schedule and emission defaults") {
  PretrainPlan plan;
  plan.total_steps = 1000;
  plan.adam.learning_rate = 1e-4;
  CHECK(scheduled_lr(plan, 0) == doctest::Approx(1e-5));
  CHECK(scheduled_lr(plan, 9) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(plan, 10) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(plan, 505) == doctest::Approx(0.5e-4));
  CHECK(scheduled_lr(plan, 999) == doctest::Approx(1e-4 / 990));
  plan.schedule = false;
  CHECK(scheduled_lr(plan, 500) == 1e-4);
  CHECK(emission_schedule(plan) == std::vector<std::int64_t>{0, 200, 400, 600, 800, 1000});
  PretrainPlan defaults;
  CHECK(defaults.batch_size == 256);
  CHECK(defaults.seq_len == 512);
  CHECK(defaults.adam.learning_rate == 1e-4);
}

TEST_CASE("pretrain: zero steps writes only the initial checkpoint") {
  auto fx = small_fixture();
  const auto dir = test::scratch_dir("pt_zero");
  const auto res = pretrain(micro_plan(fx.vocab, dir, 0), fx.docs, fx.vocab);
  REQUIRE(res.checkpoints.size() == 1);
  CHECK(load_checkpoint(res.checkpoints[0]).step == 0);
  CHECK(read_lines(res.log_path) == std::vector<std::string>{kLossLogHeader});
}

TEST_CASE("pretrain: lineage, fingerprints and resume equivalence") {
  auto fx = small_fixture();
  const auto dir = test::scratch_dir("pt_run");
  auto plan = micro_plan(fx.vocab, dir / "sc", 12);
  plan.emit_steps = {5, 12};
  const auto sc = pretrain(plan, fx.docs, fx.vocab);
  REQUIRE(sc.checkpoints.size() == 3);
  CHECK(sc.log.size() == 12);
  for (const auto& p : sc.checkpoints) {
    const auto c = load_checkpoint(p);
    CHECK(c.lineage.strategy == Strategy::kSc);
    CHECK(c.lineage.parent_id.empty());
    CHECK(c.lineage.steps == c.step);
  }

  SUBCASE("resume from step 5 reproduces the run bit-wise") {
    auto again = plan;
    again.out_dir = dir / "resumed";
    std::filesystem::create_directories(again.out_dir);
    std::filesystem::copy_file(sc.log_path, again.out_dir / "loss.csv");
    const auto res = pretrain(again, fx.docs, fx.vocab, sc.checkpoints[1]);
    REQUIRE(res.checkpoints.size() == 1);
    CHECK(read_file(res.checkpoints[0]) == read_file(sc.checkpoints[2]));
    CHECK(read_file(res.log_path) == read_file(sc.log_path));
    REQUIRE(res.log.size() == 7);
    CHECK(res.log.front().step == 6);
  }
  SUBCASE("resume rejects a different plan") {
    auto other = plan;
    other.batch_size = 8;
    other.out_dir = dir / "other";
    CHECK(code_of([&] { pretrain(other, fx.docs, fx.vocab, sc.checkpoints[1]); }) == ErrorCode::kConfigMismatch);
  }
  SUBCASE("FP inherits the vocabulary and records its parent") {
    PretrainPlan fp = plan;
    fp.strategy = Strategy::kFp;
    fp.parent = sc.checkpoints.back();
    fp.total_steps = 10;
    fp.emit_steps.clear();
    fp.out_dir = dir / "fp";
    const auto res = pretrain(fp, fx.docs, fx.vocab);
    const std::string parent_id = read_checkpoint_info(sc.checkpoints.back()).id;
    REQUIRE(res.checkpoints.size() == 6);
    for (const auto& p : res.checkpoints) {
      const auto c = load_checkpoint(p);
      CHECK(c.lineage.strategy == Strategy::kFp);
      CHECK(c.lineage.parent_id == parent_id);
      CHECK(c.lineage.steps == 12 + c.step);
      CHECK(c.vocab_fingerprint == fx.vocab.fingerprint());
    }
    const auto chain = lineage_chain(res.checkpoints.back(), sc.checkpoints);
    CHECK(chain.size() == 2);

    auto other = small_fixture(9, 1);
    fp.out_dir = dir / "fp_bad";
    CHECK(code_of([&] { pretrain(fp, other.docs, other.vocab); }) == ErrorCode::kFingerprintMismatch);
  }
}

TEST_CASE("pretrain: identical seeds give byte-identical outputs") {
  auto fx = small_fixture();
  const auto dir = test::scratch_dir("pt_det");
  const auto a = pretrain(micro_plan(fx.vocab, dir / "a", 6), fx.docs, fx.vocab);
  const auto b = pretrain(micro_plan(fx.vocab, dir / "b", 6), fx.docs, fx.vocab);
  CHECK(read_file(a.log_path) == read_file(b.log_path));
  REQUIRE(a.checkpoints.size() == b.checkpoints.size());
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
    CHECK(read_file(a.checkpoints[i]) == read_file(b.checkpoints[i]));
}
