#include "slab/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "slab/error.hpp"
#include "slab/util/io.hpp"

namespace slab {

namespace {

std::vector<KeySpec> build_keys() {
  std::vector<KeySpec> keys{
      // shared
      {"out", "", "output directory (must not exist yet)"},
      {"seed", "0", "random seed"},
      {"task", "multilabel", "task type: multilabel, hierarchical-binary, hierarchical-multilabel, ner"},
      {"data", "", "task file stem; reads <stem>.train/.dev/.test.jsonl"},
      {"checkpoint", "", "checkpoint file"},
      {"vocab", "", "directory holding vocab.txt and merges.txt"},
      {"corpus", "", "comma-separated document files (.jsonl stores or one document per line)"},
      {"mask-rate", "0.15", "fraction of tokens masked"},
      // gen-synth
      {"domains", "a,b", "synthetic domain names"},
      {"overlap", "0", "fraction of each lexicon shared by all domains"},
      {"docs-per-domain", "200", "documents per synthetic corpus"},
      {"min-sentences", "3", "sentences per synthetic document, lower bound"},
      {"max-sentences", "8", "sentences per synthetic document, upper bound"},
      {"word-classes", "6", "word classes per synthetic grammar"},
      {"words-per-class", "30", "words per class"},
      {"templates", "8", "sentence templates per grammar"},
      {"follow-prob", "0.6", "probability of a word's preferred successor"},
      {"task-domain", "1", "index of the domain the task text is drawn from"},
      {"task-records", "200", "task records across all splits"},
      {"num-labels", "4", "labels of multilabel tasks"},
      {"facts-per-doc", "4", "maximum facts per hierarchical record"},
      {"train-fraction", "0.8", "share of records in the train split"},
      {"dev-fraction", "0.1", "share of records in the dev split"},
      // train-vocab, ingest
      {"vocab-size", "30000", "target vocabulary size including specials"},
      {"manifest", "", "corpus manifest (JSON lines)"},
      // pretrain
      {"strategy", "sc", "sc (from scratch), fp (further pre-train from --parent) or generic"},
      {"parent", "", "parent checkpoint for fp"},
      {"preset", "base", "encoder preset: base, small, tiny"},
      {"max-positions", "0", "position table size; 0 keeps the preset's"},
      {"steps", "1000000", "pre-training updates"},
      {"pretrain-batch-size", "256", "pre-training batch size"},
      {"seq-len", "512", "pre-training sequence length"},
      {"pretrain-lr", "1e-4", "peak pre-training learning rate"},
      {"schedule", "true", "linear warmup then linear decay"},
      {"warmup-fraction", "0.01", "share of steps spent warming up"},
      {"nsp", "true", "next-sentence prediction objective"},
      {"dupe-factor", "10", "masked copies of the corpus per epoch"},
      {"emit-steps", "", "checkpoint steps; empty means every 20% of the run"},
      {"log-interval", "1", "steps between loss log rows"},
      {"resume", "", "checkpoint of an interrupted run in --out to continue from"},
      // finetune, grid-search, eval
      {"lr", "2e-5", "fine-tuning learning rate"},
      {"batch-size", "16", "fine-tuning batch size"},
      {"dropout", "0.1", "fine-tuning dropout"},
      {"epochs", "4", "fine-tuning epochs, or 'early' for early stopping"},
      {"max-len", "128", "tokens per sequence (per fact for hierarchical tasks)"},
      {"max-facts", "16", "facts kept per hierarchical record"},
      {"freeze-encoder", "false", "train only the task head"},
      {"crf-lr-scale", "100", "learning-rate multiplier for CRF transitions"},
      {"threshold", "0.5", "decision threshold for sigmoid outputs"},
      {"eval-batch", "32", "batch size for evaluation passes"},
      {"space", "default", "grid: default or expanded"},
      {"seeds", "0", "comma-separated seeds per grid point"},
      {"workers", "1", "concurrent grid trials"},
      {"grid-lrs", "", "override the grid's learning rates"},
      {"grid-batch-sizes", "", "override the grid's batch sizes"},
      {"grid-dropouts", "", "override the grid's dropout rates"},
      {"grid-epochs", "", "override the grid's epochs ('early' for early stopping)"},
      {"split", "test", "split to evaluate: train, dev or test"},
      // perplexity
      {"texts", "", "comma-separated text files to score"},
      {"rounds", "5", "masking rounds"},
      // bench
      {"presets", "base-shape,small-shape,distil-shape,albert-shape,albert-large-shape", "bench presets"},
      {"reference", "base-shape", "bench reference preset"},
      {"budget-mb", "2048", "memory budget in MiB"},
      {"bench-vocab-size", "0", "vocabulary size for bench shapes; 0 keeps 30000"},
      {"bench-seq-len", "16", "bench sequence length"},
      {"bench-steps", "1", "timed steps per repetition"},
      {"bench-repetitions", "3", "timing repetitions"},
      {"time-max-batch", "true", "also time training at the maximum batch size"},
  };
  std::sort(keys.begin(), keys.end(), [](const KeySpec& a, const KeySpec& b) { return a.name < b.name; });
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  fail(ErrorCode::kInvalidArgument, "--" + key + ": expected " + expected + ", got '" + value + "'");
}

}  // namespace

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = build_keys();
  return keys;
}

const KeySpec* find_key(std::string_view name) {
  const auto& keys = config_keys();
  const auto it =
      std::lower_bound(keys.begin(), keys.end(), name, [](const KeySpec& k, std::string_view n) { return k.name < n; });
  return it != keys.end() && it->name == name ? &*it : nullptr;
}

RunConfig::RunConfig() {
  for (const KeySpec& k : config_keys()) values_[k.name] = {k.default_value, "default"};
}

void RunConfig::set(const std::string& key, std::string value, std::string origin) {
  require(find_key(key) != nullptr, ErrorCode::kInvalidArgument, "unknown setting '" + key + "'");
  values_[key] = {std::move(value), std::move(origin)};
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorCode::kParse, where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    require(find_key(key) != nullptr, ErrorCode::kInvalidArgument, where + ": unknown setting '" + key + "'");
    set(key, trim(line.substr(eq + 1)), "file " + path.string());
  }
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::kInvalidArgument, "unknown setting '" + key + "'");
  return it->second;
}

const std::string& RunConfig::text(const std::string& key) const { return entry(key).value; }
const std::string& RunConfig::origin(const std::string& key) const { return entry(key).origin; }

std::int64_t parse_integer(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  const std::int64_t n = parse_integer(key, v);
  if (n < 0) bad_value(key, v, "a non-negative integer");
  return static_cast<std::size_t>(n);
}

double parse_number(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::int64_t RunConfig::integer(const std::string& key) const { return parse_integer(key, text(key)); }
std::size_t RunConfig::count(const std::string& key) const { return parse_count(key, text(key)); }
double RunConfig::number(const std::string& key) const { return parse_number(key, text(key)); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = text(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream in(text(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path RunConfig::path(const std::string& key) const { return std::filesystem::path(text(key)); }

std::string RunConfig::echo(std::span<const std::string> keys) const {
  std::vector<std::string> sorted(keys.begin(), keys.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::string out;
  for (const auto& k : sorted) out += k + "=" + text(k) + "\n";
  return out;
}

}  // namespace slab
