#include "slab/evalbench/metrics.hpp"

#include <algorithm>
#include <set>

#include "slab/error.hpp"
#include "slab/heads/ner.hpp"

namespace slab {

void finish_f1(MetricReport& r) {
  const double tp = static_cast<double>(r.tp);
  r.precision = r.tp + r.fp == 0 ? 0.0 : tp / static_cast<double>(r.tp + r.fp);
  r.recall = r.tp + r.fn == 0 ? 0.0 : tp / static_cast<double>(r.tp + r.fn);
  if (r.tp + r.fp + r.fn == 0)
    r.value = 1.0;
  else if (r.precision + r.recall == 0.0)
    r.value = 0.0;
  else
    r.value = 2.0 * r.precision * r.recall / (r.precision + r.recall);
}

MetricReport micro_f1(std::span<const LabelSet> predicted, std::span<const LabelSet> gold) {
  require(predicted.size() == gold.size(), ErrorCode::kShapeMismatch,
          "micro_f1: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(gold.size()) +
              " gold instances");
  MetricReport r;
  r.metric = "micro_f1";
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::set<std::string> p(predicted[i].begin(), predicted[i].end()), g(gold[i].begin(), gold[i].end());
    for (const auto& l : p) (g.count(l) ? r.tp : r.fp) += 1;
    for (const auto& l : g) r.fn += p.count(l) ? 0 : 1;
  }
  finish_f1(r);
  return r;
}

MetricReport accuracy(std::span<const int> predicted, std::span<const int> gold) {
  require(predicted.size() == gold.size(), ErrorCode::kShapeMismatch,
          "accuracy: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(gold.size()) +
              " gold instances");
  require(!gold.empty(), ErrorCode::kEmptyInput, "accuracy: no instances");
  MetricReport r;
  r.metric = "accuracy";
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i];
  r.value = static_cast<double>(correct) / static_cast<double>(gold.size());
  return r;
}

std::vector<Span> bio_spans(std::span<const std::string> tags) {
  std::vector<Span> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto [prefix, type] = parse_bio(tags[i]);
    if (prefix == 'I' && open && spans.back().type == type) {
      spans.back().end = i + 1;
      continue;
    }
    open = prefix != 'O';
    if (open) spans.push_back({i, i + 1, type});
  }
  return spans;
}

MetricReport entity_f1(std::span<const std::vector<std::string>> predicted,
                       std::span<const std::vector<std::string>> gold) {
  require(predicted.size() == gold.size(), ErrorCode::kShapeMismatch,
          "entity_f1: " + std::to_string(predicted.size()) + " predicted sentences for " +
              std::to_string(gold.size()) + " gold sentences");
  MetricReport r;
  r.metric = "entity_f1";
  for (std::size_t i = 0; i < gold.size(); ++i) {
    require(predicted[i].size() == gold[i].size(), ErrorCode::kShapeMismatch,
            "entity_f1: sentence " + std::to_string(i) + " is not token-aligned");
    const auto p = bio_spans(predicted[i]), g = bio_spans(gold[i]);
    const std::set<Span> gs(g.begin(), g.end());
    for (const auto& s : p) (gs.count(s) ? r.tp : r.fp) += 1;
    r.fn += g.size() - std::count_if(p.begin(), p.end(), [&](const Span& s) { return gs.count(s) != 0; });
  }
  finish_f1(r);
  return r;
}

}  // namespace slab
