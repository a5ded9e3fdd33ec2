#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "slab/cli/tasks.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

// Synthetic sublanguages. Each domain has a lexicon split into word classes,
// a set of sentence templates over those classes, and a per-word preferred
// successor, so text has learnable structure at both the class and the word
// level.
//
// overlap is the fraction of every class lexicon (and of the template set)
// drawn from material common to all domains. With overlap 0 each domain also
// spells its words from its own disjoint slice of the alphabet; otherwise all
// domains use the full lowercase alphabet.
struct SynthSpec {
  std::vector<std::string> domains{"a", "b"};
  double overlap = 0.0;
  std::size_t docs_per_domain = 200;
  std::size_t min_sentences = 3;
  std::size_t max_sentences = 8;
  std::size_t word_classes = 6;
  std::size_t words_per_class = 30;
  std::size_t templates = 8;
  double follow_prob = 0.6;

  TaskKind task = TaskKind::kMultilabel;
  std::size_t task_domain = 1;  // index into domains; clamped to the last domain
  std::size_t task_records = 200;
  std::size_t num_labels = 4;
  std::size_t max_facts = 4;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;

  std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);

class SynthLanguage {
 public:
  struct Shared {
    std::vector<std::vector<std::string>> classes;
    std::vector<std::vector<std::size_t>> templates;
  };

  // `used` holds every word spelled so far across domains and is extended.
  SynthLanguage(const SynthSpec& spec, std::size_t domain, const Shared& shared, std::set<std::string>& used);

  const std::string& name() const { return name_; }
  const std::string& alphabet() const { return alphabet_; }
  std::vector<std::string> lexicon() const;

  // Words of one sentence, without the closing period.
  std::vector<std::string> sentence_words(Rng& rng) const;
  std::string sentence(Rng& rng) const;
  std::string document(Rng& rng, std::size_t min_sentences, std::size_t max_sentences) const;

  // A word spelled from this domain's alphabet that is not in any lexicon of
  // the SynthSpec (reserved for task keywords and entity names).
  std::string fresh_word(Rng& rng, std::set<std::string>& used) const;

 private:
  std::size_t pick(Rng& rng, std::size_t cls) const;

  std::string name_;
  std::string alphabet_;
  std::vector<std::vector<std::string>> classes_;
  std::vector<std::vector<std::size_t>> followers_;  // flattened word index -> per-class successor index
  std::vector<std::size_t> class_offset_;
  std::vector<std::vector<std::size_t>> templates_;
  std::vector<std::vector<double>> cumulative_;
  double follow_prob_;
};

// All domains of a spec, built in order so spellings never collide. The
// returned set holds every lexicon word.
std::vector<SynthLanguage> build_languages(const SynthSpec& spec, std::set<std::string>* used = nullptr);

// One list of documents per domain, in spec.domains order.
std::vector<std::vector<std::string>> generate_corpora(const SynthSpec& spec);

Splits<TextRecord> generate_multilabel(const SynthSpec& spec);
Splits<HierRecord> generate_hierarchical(const SynthSpec& spec, bool binary);
Splits<NerRecord> generate_ner(const SynthSpec& spec);

// Unlabelled text of the task's training split, one document per record
// (facts and tokens joined by spaces).
std::vector<std::string> task_documents(const SynthSpec& spec);

struct SynthFiles {
  std::vector<std::filesystem::path> corpora;
  std::filesystem::path manifest;
  std::filesystem::path task_stem;
};

// Writes corpus/<domain>.txt (one document per line; the task domain also
// carries task_documents), a manifest.jsonl over them with content hashes,
// and task/<kind>.{train,dev,test}.jsonl.
SynthFiles write_synth(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace slab
