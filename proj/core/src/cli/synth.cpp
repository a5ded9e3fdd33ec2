#include "slab/cli/synth.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "slab/error.hpp"
#include "slab/util/hash.hpp"
#include "slab/util/io.hpp"

namespace slab {

namespace {

constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
constexpr std::size_t kMinWordLen = 3;
constexpr std::size_t kMaxWordLen = 7;
constexpr double kLabelRate = 0.35;
const std::vector<std::string> kEntityTypes{"PARTY", "DATE", "AMOUNT", "LAW", "COURT", "PLACE", "TERM", "ROLE"};

std::string random_word(Rng& rng, std::string_view alphabet, std::set<std::string>& used) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(kMinWordLen, kMaxWordLen));
    std::string w;
    for (std::size_t i = 0; i < len; ++i) w.push_back(alphabet[rng.uniform_int(alphabet.size())]);
    if (used.insert(w).second) return w;
  }
  fail(ErrorCode::kInvalidArgument, "synth: alphabet '" + std::string(alphabet) + "' too small for the requested lexicon");
}

std::vector<std::size_t> random_template(Rng& rng, std::size_t classes) {
  std::vector<std::size_t> t(static_cast<std::size_t>(rng.uniform_int(5, 10)));
  for (auto& c : t) c = rng.uniform_int(classes);
  return t;
}

std::string alphabet_for(const SynthSpec& spec, std::size_t domain) {
  if (spec.overlap > 0.0) return std::string(kLetters);
  const std::size_t n = spec.domains.size();
  const std::size_t begin = domain * kLetters.size() / n;
  const std::size_t end = (domain + 1) * kLetters.size() / n;
  return std::string(kLetters.substr(begin, end - begin));
}

std::size_t task_domain(const SynthSpec& spec) { return std::min(spec.task_domain, spec.domains.size() - 1); }

template <class R>
Splits<R> split(std::vector<R> records, const SynthSpec& spec) {
  const auto n = records.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.train_fraction));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.dev_fraction)));
  Splits<R> out;
  out.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.dev.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train),
                 records.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  out.test.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), records.end());
  return out;
}

std::string record_id(std::string_view prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  return std::string(prefix) + "-" + std::string(6 - std::min<std::size_t>(6, digits.size()), '0') + digits;
}

void insert_word(Rng& rng, std::vector<std::string>& words, const std::string& w) {
  const auto at = static_cast<std::ptrdiff_t>(rng.uniform_int(words.size() + 1));
  words.insert(words.begin() + at, w);
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// Keyword pairs per label, spelled in the task domain's alphabet.
std::vector<std::vector<std::string>> label_keywords(const SynthSpec& spec, const SynthLanguage& lang,
                                                     std::set<std::string>& used, std::size_t per_label) {
  Rng rng(mix_seed(spec.seed, 2));
  std::vector<std::vector<std::string>> kw(spec.num_labels);
  for (auto& k : kw)
    for (std::size_t i = 0; i < per_label; ++i) k.push_back(lang.fresh_word(rng, used));
  return kw;
}

}  // namespace

void validate(const SynthSpec& spec) {
  require(!spec.domains.empty(), ErrorCode::kInvalidArgument, "synth: at least one domain required");
  std::set<std::string> names;
  for (const auto& d : spec.domains) {
    require(!d.empty(), ErrorCode::kInvalidArgument, "synth: empty domain name");
    require(names.insert(d).second, ErrorCode::kInvalidArgument, "synth: duplicate domain name '" + d + "'");
  }
  require(spec.overlap >= 0.0 && spec.overlap <= 1.0, ErrorCode::kInvalidArgument, "synth: overlap must be in [0, 1]");
  require(spec.overlap > 0.0 || spec.domains.size() * 2 <= kLetters.size(), ErrorCode::kInvalidArgument,
          "synth: degenerate grammar, " + std::to_string(spec.domains.size()) +
              " disjoint domains leave an empty or single-letter alphabet");
  require(spec.word_classes >= 1 && spec.words_per_class >= 1 && spec.templates >= 1, ErrorCode::kInvalidArgument,
          "synth: degenerate grammar, word classes, words per class and templates must all be positive");
  require(spec.min_sentences >= 1 && spec.min_sentences <= spec.max_sentences, ErrorCode::kInvalidArgument,
          "synth: need 1 <= min_sentences <= max_sentences");
  require(spec.docs_per_domain >= 1, ErrorCode::kInvalidArgument, "synth: docs_per_domain must be positive");
  require(spec.follow_prob >= 0.0 && spec.follow_prob <= 1.0, ErrorCode::kInvalidArgument,
          "synth: follow_prob must be in [0, 1]");
  require(spec.num_labels >= 1, ErrorCode::kInvalidArgument, "synth: num_labels must be positive");
  require(spec.task != TaskKind::kNer || spec.num_labels <= kEntityTypes.size(), ErrorCode::kInvalidArgument,
          "synth: at most " + std::to_string(kEntityTypes.size()) + " entity types");
  require(spec.max_facts >= 1, ErrorCode::kInvalidArgument, "synth: max_facts must be positive");
  require(spec.train_fraction > 0.0 && spec.dev_fraction >= 0.0 && spec.train_fraction + spec.dev_fraction <= 1.0,
          ErrorCode::kInvalidArgument, "synth: invalid split fractions");
}

SynthLanguage::SynthLanguage(const SynthSpec& spec, std::size_t domain, const Shared& shared,
                             std::set<std::string>& used)
    : name_(spec.domains.at(domain)), alphabet_(alphabet_for(spec, domain)), follow_prob_(spec.follow_prob) {
  Rng rng(mix_seed(spec.seed, 1, domain));
  classes_.resize(spec.word_classes);
  for (std::size_t c = 0; c < spec.word_classes; ++c) {
    auto& words = classes_[c];
    words = shared.classes[c];
    while (words.size() < spec.words_per_class) words.push_back(random_word(rng, alphabet_, used));
    rng.shuffle(std::span(words));
  }
  templates_ = shared.templates;
  while (templates_.size() < spec.templates) templates_.push_back(random_template(rng, spec.word_classes));

  std::size_t total = 0;
  for (const auto& words : classes_) {
    class_offset_.push_back(total);
    total += words.size();
    std::vector<double> cum;
    double acc = 0.0;
    for (std::size_t r = 0; r < words.size(); ++r) cum.push_back(acc += 1.0 / static_cast<double>(r + 1));
    for (double& v : cum) v /= acc;
    cumulative_.push_back(std::move(cum));
  }
  followers_.resize(total);
  for (auto& f : followers_) {
    f.resize(spec.word_classes);
    for (std::size_t c = 0; c < spec.word_classes; ++c) f[c] = rng.uniform_int(classes_[c].size());
  }
}

std::vector<std::string> SynthLanguage::lexicon() const {
  std::vector<std::string> out;
  for (const auto& words : classes_) out.insert(out.end(), words.begin(), words.end());
  return out;
}

std::size_t SynthLanguage::pick(Rng& rng, std::size_t cls) const {
  const auto& cum = cumulative_[cls];
  const double u = rng.uniform();
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
}

std::vector<std::string> SynthLanguage::sentence_words(Rng& rng) const {
  const auto& tmpl = templates_[rng.uniform_int(templates_.size())];
  std::vector<std::string> out;
  std::size_t prev_flat = 0;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const std::size_t cls = tmpl[i];
    const bool follow = i > 0 && rng.bernoulli(follow_prob_);
    const std::size_t idx = follow ? followers_[prev_flat][cls] : pick(rng, cls);
    out.push_back(classes_[cls][idx]);
    prev_flat = class_offset_[cls] + idx;
  }
  return out;
}

std::string SynthLanguage::sentence(Rng& rng) const { return join(sentence_words(rng)) + "."; }

std::string SynthLanguage::document(Rng& rng, std::size_t min_sentences, std::size_t max_sentences) const {
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(min_sentences), static_cast<std::int64_t>(max_sentences)));
  std::string doc;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) doc += ' ';
    doc += sentence(rng);
  }
  return doc;
}

std::string SynthLanguage::fresh_word(Rng& rng, std::set<std::string>& used) const {
  return random_word(rng, alphabet_, used);
}

std::vector<SynthLanguage> build_languages(const SynthSpec& spec, std::set<std::string>* used_out) {
  validate(spec);
  std::set<std::string> used;
  SynthLanguage::Shared shared;
  Rng rng(mix_seed(spec.seed, 0));
  const auto shared_words = static_cast<std::size_t>(std::llround(spec.overlap * static_cast<double>(spec.words_per_class)));
  const auto shared_templates = static_cast<std::size_t>(std::llround(spec.overlap * static_cast<double>(spec.templates)));
  shared.classes.resize(spec.word_classes);
  for (auto& words : shared.classes)
    for (std::size_t i = 0; i < shared_words; ++i) words.push_back(random_word(rng, kLetters, used));
  for (std::size_t i = 0; i < shared_templates; ++i) shared.templates.push_back(random_template(rng, spec.word_classes));

  std::vector<SynthLanguage> langs;
  for (std::size_t d = 0; d < spec.domains.size(); ++d) langs.emplace_back(spec, d, shared, used);
  if (used_out) *used_out = std::move(used);
  return langs;
}

std::vector<std::vector<std::string>> generate_corpora(const SynthSpec& spec) {
  const auto langs = build_languages(spec);
  std::vector<std::vector<std::string>> out(langs.size());
  for (std::size_t d = 0; d < langs.size(); ++d) {
    Rng rng(mix_seed(spec.seed, 10, d));
    for (std::size_t i = 0; i < spec.docs_per_domain; ++i)
      out[d].push_back(langs[d].document(rng, spec.min_sentences, spec.max_sentences));
  }
  return out;
}

Splits<TextRecord> generate_multilabel(const SynthSpec& spec) {
  std::set<std::string> used;
  const auto langs = build_languages(spec, &used);
  const SynthLanguage& lang = langs[task_domain(spec)];
  const auto keywords = label_keywords(spec, lang, used, 2);
  std::vector<TextRecord> records;
  for (std::size_t i = 0; i < spec.task_records; ++i) {
    Rng rng(mix_seed(spec.seed, 3, i));
    std::vector<std::string> words;
    const auto n_sent = rng.uniform_int(1, 2);
    for (std::int64_t s = 0; s < n_sent; ++s) {
      auto sw = lang.sentence_words(rng);
      sw.back() += '.';
      words.insert(words.end(), sw.begin(), sw.end());
    }
    TextRecord r{record_id("ml", i), "", {}};
    for (std::size_t j = 0; j < spec.num_labels; ++j) {
      if (!rng.bernoulli(kLabelRate)) continue;
      r.labels.push_back("c" + std::to_string(j));
      insert_word(rng, words, keywords[j][rng.uniform_int(keywords[j].size())]);
    }
    r.text = join(words);
    records.push_back(std::move(r));
  }
  return split(std::move(records), spec);
}

Splits<HierRecord> generate_hierarchical(const SynthSpec& spec, bool binary) {
  std::set<std::string> used;
  const auto langs = build_languages(spec, &used);
  const SynthLanguage& lang = langs[task_domain(spec)];
  const auto keywords = label_keywords(spec, lang, used, 2);
  std::vector<HierRecord> records;
  for (std::size_t i = 0; i < spec.task_records; ++i) {
    Rng rng(mix_seed(spec.seed, 4, i));
    const auto n_facts = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(spec.max_facts)));
    std::vector<std::vector<std::string>> facts(n_facts);
    for (auto& f : facts) f = lang.sentence_words(rng);
    HierRecord r{record_id(binary ? "hb" : "hm", i), {}, {}};
    const std::size_t n_labels = binary ? 1 : spec.num_labels;
    for (std::size_t j = 0; j < n_labels; ++j) {
      if (!rng.bernoulli(binary ? 0.5 : kLabelRate)) continue;
      r.labels.push_back(binary ? "violation" : "c" + std::to_string(j));
      insert_word(rng, facts[rng.uniform_int(n_facts)], keywords[j][rng.uniform_int(keywords[j].size())]);
    }
    for (const auto& f : facts) r.facts.push_back(join(f) + ".");
    records.push_back(std::move(r));
  }
  return split(std::move(records), spec);
}

Splits<NerRecord> generate_ner(const SynthSpec& spec) {
  std::set<std::string> used;
  const auto langs = build_languages(spec, &used);
  const SynthLanguage& lang = langs[task_domain(spec)];
  const auto names = label_keywords(spec, lang, used, 6);
  std::vector<NerRecord> records;
  for (std::size_t i = 0; i < spec.task_records; ++i) {
    Rng rng(mix_seed(spec.seed, 5, i));
    const auto words = lang.sentence_words(rng);
    const std::size_t gaps = words.size() + 1;
    const auto n_entities = static_cast<std::size_t>(rng.uniform_int(1, 3));
    std::vector<std::size_t> order(gaps);
    for (std::size_t g = 0; g < gaps; ++g) order[g] = g;
    rng.shuffle(std::span(order));
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_entities, gaps)));
    std::sort(chosen.begin(), chosen.end());

    NerRecord r{record_id("ner", i), {}, {}};
    std::size_t next = 0;
    for (std::size_t g = 0; g < gaps; ++g) {
      if (next < chosen.size() && chosen[next] == g) {
        ++next;
        const std::size_t type = rng.uniform_int(spec.num_labels);
        const auto len = static_cast<std::size_t>(rng.uniform_int(1, 3));
        for (std::size_t k = 0; k < len; ++k) {
          r.tokens.push_back(names[type][rng.uniform_int(names[type].size())]);
          r.tags.push_back((k == 0 ? "B-" : "I-") + kEntityTypes[type]);
        }
      }
      if (g < words.size()) {
        r.tokens.push_back(words[g]);
        r.tags.push_back("O");
      }
    }
    records.push_back(std::move(r));
  }
  return split(std::move(records), spec);
}

std::vector<std::string> task_documents(const SynthSpec& spec) {
  auto join = [](const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : " ") + p;
    return out;
  };
  std::vector<std::string> docs;
  switch (spec.task) {
    case TaskKind::kMultilabel:
      for (const auto& r : generate_multilabel(spec).train) docs.push_back(r.text);
      break;
    case TaskKind::kHierBinary:
    case TaskKind::kHierMultilabel:
      for (const auto& r : generate_hierarchical(spec, spec.task == TaskKind::kHierBinary).train)
        docs.push_back(join(r.facts));
      break;
    case TaskKind::kNer:
      for (const auto& r : generate_ner(spec).train) docs.push_back(join(r.tokens));
      break;
  }
  return docs;
}

SynthFiles write_synth(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  SynthFiles files;
  auto corpora = generate_corpora(spec);
  for (auto& doc : task_documents(spec)) corpora[task_domain(spec)].push_back(std::move(doc));
  std::string manifest;
  for (std::size_t d = 0; d < corpora.size(); ++d) {
    std::string text;
    for (const auto& doc : corpora[d]) text += doc + "\n";
    const std::filesystem::path rel = std::filesystem::path("corpus") / (spec.domains[d] + ".txt");
    write_file_atomic(out_dir / rel, text);
    files.corpora.push_back(out_dir / rel);
    manifest += nlohmann::json{{"name", spec.domains[d]},
                               {"source", rel.generic_string()},
                               {"hash", sha256_hex(text)},
                               {"domain", spec.domains[d]}}
                    .dump() +
                "\n";
  }
  files.manifest = out_dir / "manifest.jsonl";
  write_file_atomic(files.manifest, manifest);

  files.task_stem = out_dir / "task" / std::string(to_string(spec.task));
  switch (spec.task) {
    case TaskKind::kMultilabel: write_splits(files.task_stem, generate_multilabel(spec)); break;
    case TaskKind::kHierBinary: write_splits(files.task_stem, generate_hierarchical(spec, true)); break;
    case TaskKind::kHierMultilabel: write_splits(files.task_stem, generate_hierarchical(spec, false)); break;
    case TaskKind::kNer: write_splits(files.task_stem, generate_ner(spec)); break;
  }
  return files;
}

}  // namespace slab
