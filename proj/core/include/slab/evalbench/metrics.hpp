#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace slab {

struct MetricReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// Fills precision, recall and F1 from the counts. P = 0 when TP + FP = 0,
// R = 0 when TP + FN = 0, F1 = 0 when P + R = 0; with no positives at all on
// either side the predictions match gold exactly and F1 = 1.
void finish_f1(MetricReport& report);

using LabelSet = std::vector<std::string>;

// Pooled over all instances and labels; duplicate labels in a set count once.
// Throws kShapeMismatch on a length mismatch.
MetricReport micro_f1(std::span<const LabelSet> predicted, std::span<const LabelSet> gold);

// Fraction of equal entries.
MetricReport accuracy(std::span<const int> predicted, std::span<const int> gold);

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::string type;

  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

// BIO segmentation; an I- tag that does not continue a span of its type opens
// a new one. Throws kInvalidArgument for tags outside the scheme.
std::vector<Span> bio_spans(std::span<const std::string> tags);

// Exact (start, end, type) matches pooled over sentences.
MetricReport entity_f1(std::span<const std::vector<std::string>> predicted,
                       std::span<const std::vector<std::string>> gold);

}  // namespace slab
