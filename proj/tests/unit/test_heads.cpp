#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "slab/encoder/model.hpp"
#include "slab/error.hpp"
#include "slab/heads/crf.hpp"
#include "slab/heads/hier.hpp"
#include "slab/heads/multilabel.hpp"
#include "slab/heads/ner.hpp"
#include "slab/numerics/grad_check.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"

using namespace slab;

namespace {

TagLattice<double> random_lattice(Rng& rng, std::size_t steps, std::size_t k, double spread = 2.0) {
  TagLattice<double> l{Tensor<double>({steps, k}), Tensor<double>({k, k})};
  for (auto& x : l.emissions.data()) x = rng.normal(0.0, spread);
  for (auto& x : l.transitions.data()) x = rng.normal(0.0, spread);
  return l;
}

// Calls fn(path) for every one of K^T paths, lowest tags first at step 0.
template <class Fn>
void for_each_path(std::size_t steps, std::size_t k, Fn fn) {
  std::vector<std::int32_t> path(steps, 0);
  while (true) {
    fn(path);
    std::size_t t = 0;
    while (t < steps && static_cast<std::size_t>(++path[t]) == k) path[t++] = 0;
    if (t == steps) return;
  }
}

double brute_log_partition(const TagLattice<double>& l) {
  std::vector<double> scores;
  for_each_path(l.steps(), l.tags(), [&](const auto& p) { scores.push_back(crf_path_score(l, p)); });
  const double m = *std::max_element(scores.begin(), scores.end());
  double s = 0;
  for (double x : scores) s += std::exp(x - m);
  return m + std::log(s);
}

// Best path under the tie rule: among equal scores prefer the lowest tag at
// the latest differing step.
std::vector<std::int32_t> brute_viterbi(const TagLattice<double>& l) {
  std::vector<std::int32_t> best;
  double top = -INFINITY;
  for_each_path(l.steps(), l.tags(), [&](const auto& p) {
    const double s = crf_path_score(l, p);
    bool better = s > top;
    if (s == top) {
      std::size_t t = p.size();
      while (t-- > 0 && p[t] == best[t]) {
      }
      better = p[t] < best[t];
    }
    if (better) top = s, best = p;
  });
  return best;
}

EncoderConfig tiny() {
  EncoderConfig c = preset_config("tiny");
  c.dropout = 0.0;
  return c;
}

EncodedPair random_fact(Rng& rng, std::size_t len, std::size_t max_len) {
  std::vector<TokenId> a(len);
  for (auto& t : a) t = static_cast<TokenId>(rng.uniform_int(5, 511));
  return frame_pair(a, std::nullopt, max_len);
}

}  // namespace

TEST_CASE("multilabel head closed forms") {
  MultiLabelHead<double> head(8, 5, 1);
  head.weight.value.fill(0.0);
  Tensor<double> cls({3, 8});
  Rng rng(2);
  for (auto& x : cls.data()) x = rng.normal();
  const auto probs = multilabel_scores(cls, head);
  for (double p : probs.data()) CHECK(p == 0.5);
  Tape<double> tape;
  auto logits = multilabel_logits(tape, tape.constant(cls), head);
  CHECK(multilabel_loss(logits, Tensor<double>({3, 5})).value().item() == doctest::Approx(5 * std::log(2.0)));
  CHECK_THROWS_AS(multilabel_loss(logits, Tensor<double>({3, 4})), Error);
  CHECK_THROWS_AS(multilabel_loss(logits, Tensor<double>({3, 5}, 2.0)), Error);
  CHECK_THROWS_AS(MultiLabelHead<float>(8, 0, 1), Error);
}

TEST_CASE("multilabel probabilities are in (0,1) and loss is non-negative") {
  Rng rng(3);
  MultiLabelHead<double> head(6, 4, 7);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> cls({2, 6}), y({2, 4});
    for (auto& x : cls.data()) x = rng.normal(0.0, 10.0);
    for (auto& x : y.data()) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const auto probs = multilabel_scores(cls, head);
    for (double p : probs.data()) CHECK((p > 0.0 && p < 1.0));
    Tape<double> tape;
    CHECK(multilabel_loss(multilabel_logits(tape, tape.constant(cls), head), y).value().item() >= 0.0);
  }
}

TEST_CASE("grad_check: multilabel head weights") {
  MultiLabelHead<double> head(6, 3, 4);
  Tensor<double> cls({4, 6}), y({4, 3});
  Rng rng(5);
  for (auto& x : cls.data()) x = rng.normal();
  for (auto& x : y.data()) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
  auto params = head.parameters();
  const auto report = grad_check(
      [&](Tape<double>& tape) { return multilabel_loss(multilabel_logits(tape, tape.constant(cls), head), y); },
      std::span<Parameter<double>* const>(params));
  CHECK(report.coords_checked == 21);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("hier_pool: identity, permutation symmetry, rejection") {
  HierPooler<double> pooler(8, 3);
  Rng rng(6);
  Tensor<double> facts({4, 8});
  for (auto& x : facts.data()) x = rng.normal();
  {
    Tape<double> tape;
    Tensor<double> one({1, 8}, std::vector<double>(facts.row(2).begin(), facts.row(2).end()));
    const auto out = hier_pool(tape, tape.constant(one), pooler);
    CHECK(out.alpha.value().item() == 1.0);
    CHECK(out.document.value() == one);
  }
  Tape<double> tape;
  const auto base = hier_pool(tape, tape.constant(facts), pooler);
  CHECK(std::accumulate(base.alpha.value().data().begin(), base.alpha.value().data().end(), 0.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
  std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor<double> shuffled({4, 8});
  for (std::size_t i = 0; i < 4; ++i)
    std::copy(facts.row(perm[i]).begin(), facts.row(perm[i]).end(), shuffled.row(i).begin());
  const auto moved = hier_pool(tape, tape.constant(shuffled), pooler);
  for (std::size_t i = 0; i < 4; ++i) CHECK(moved.alpha.value()[i] == doctest::Approx(base.alpha.value()[perm[i]]));
  for (std::size_t h = 0; h < 8; ++h)
    CHECK(std::abs(moved.document.value()[h] - base.document.value()[h]) < 1e-6);
  CHECK_THROWS_AS(hier_pool(tape, tape.constant(Tensor<double>({0, 8})), pooler), Error);
}

TEST_CASE("hier_encode matches a step-by-step 64-bit recomputation") {
  Encoder<double> encoder = Encoder<float>(tiny(), 2024).cast<double>();
  HierPooler<double> pooler(64, 9);
  for (auto& x : pooler.bias.value.data()) x = 0.05;
  Rng rng(7);
  std::vector<EncodedPair> facts{random_fact(rng, 5, 10), random_fact(rng, 8, 10), random_fact(rng, 2, 10)};
  Tape<double> tape;
  const auto out = hier_encode(tape, encoder, facts, pooler, 4);

  std::vector<std::vector<double>> h;
  for (const auto& f : facts) {
    Tape<double> t;
    const auto cls = encoder.forward(t, EncoderBatch::from_pairs(std::span<const EncodedPair>(&f, 1))).cls.value();
    h.emplace_back(cls.data().begin(), cls.data().end());
  }
  std::vector<double> score(3);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 64; ++j) {
      double u = pooler.bias.value[j];
      for (std::size_t k = 0; k < 64; ++k) u += h[i][k] * pooler.weight.value.at(k, j);
      s += std::tanh(u) * pooler.context.value[j];
    }
    score[i] = s;
  }
  const double m = *std::max_element(score.begin(), score.end());
  double z = 0;
  for (double s : score) z += std::exp(s - m);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.alpha.value()[i] == doctest::Approx(std::exp(score[i] - m) / z).epsilon(1e-12));
  for (std::size_t j = 0; j < 64; ++j) {
    double d = 0;
    for (std::size_t i = 0; i < 3; ++i) d += std::exp(score[i] - m) / z * h[i][j];
    CHECK(out.document.value()[j] == doctest::Approx(d).epsilon(1e-10));
  }
  CHECK_THROWS_AS(hier_encode(tape, encoder, std::span<const EncodedPair>(), pooler, 4), Error);
  CHECK_THROWS_AS(hier_encode(tape, encoder, facts, pooler, 2), Error);
}

TEST_CASE("crf_log_partition closed forms and brute force") {
  TagLattice<double> flat{Tensor<double>({1, 3}), Tensor<double>({3, 3})};
  CHECK(crf_log_partition(flat) == doctest::Approx(std::log(3.0)).epsilon(1e-15));

  Rng rng(8);
  auto l = random_lattice(rng, 5, 4);
  l.transitions.fill(0.0);
  double factored = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    double s = 0;
    for (double e : l.emissions.row(t)) s += std::exp(e);
    factored += std::log(s);
  }
  CHECK(crf_log_partition(l) == doctest::Approx(factored).epsilon(1e-12));

  for (int trial = 0; trial < 50; ++trial) {
    const auto r = random_lattice(rng, 3, 3);
    CHECK(std::abs(crf_log_partition(r) - brute_log_partition(r)) < 1e-8);
  }
}

TEST_CASE("property: exp(logZ) equals the brute-force path sum for K^T <= 1e5") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(1, 6));
    std::size_t steps = static_cast<std::size_t>(rng.uniform_int(1, 8));
    while (std::pow(static_cast<double>(k), static_cast<double>(steps)) > 1e5) --steps;
    const auto l = random_lattice(rng, steps, k);
    const double a = crf_log_partition(l), b = brute_log_partition(l);
    CAPTURE(k);
    CAPTURE(steps);
    CHECK(std::abs(std::exp(a - b) - 1.0) < 1e-8);
    const auto v = crf_viterbi(l);
    CHECK(v.tags == brute_viterbi(l));
    CHECK(v.score == doctest::Approx(crf_path_score(l, v.tags)).epsilon(1e-12));
  }
}

TEST_CASE("crf_viterbi basics and tie rule") {
  Rng rng(10);
  auto l = random_lattice(rng, 6, 4);
  l.transitions.fill(0.0);
  const auto v = crf_viterbi(l);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto row = l.emissions.row(t);
    CHECK(v.tags[t] == std::max_element(row.begin(), row.end()) - row.begin());
  }
  const auto one = random_lattice(rng, 1, 5);
  const auto row = one.emissions.row(0);
  CHECK(crf_viterbi(one).tags[0] == std::max_element(row.begin(), row.end()) - row.begin());

  for (int trial = 0; trial < 100; ++trial) {
    TagLattice<double> ties{Tensor<double>({4, 3}), Tensor<double>({3, 3})};
    for (auto& x : ties.emissions.data()) x = static_cast<double>(rng.uniform_int(0, 1));
    for (auto& x : ties.transitions.data()) x = static_cast<double>(rng.uniform_int(0, 1));
    CHECK(crf_viterbi(ties).tags == brute_viterbi(ties));
  }
  TagLattice<double> all_zero{Tensor<double>({3, 3}), Tensor<double>({3, 3})};
  CHECK(crf_viterbi(all_zero).tags == std::vector<std::int32_t>{0, 0, 0});
}

TEST_CASE("property: viterbi beats 1000 random paths") {
  Rng rng(11);
  const auto l = random_lattice(rng, 12, 5);
  const auto v = crf_viterbi(l);
  std::vector<std::int32_t> p(12);
  for (int i = 0; i < 1000; ++i) {
    for (auto& t : p) t = static_cast<std::int32_t>(rng.uniform_int(0, 4));
    CHECK(crf_path_score(l, p) <= v.score + 1e-12);
  }
}

TEST_CASE("crf_nll contracts") {
  Rng rng(12);
  const auto single = random_lattice(rng, 7, 1);
  std::vector<std::int32_t> zeros(7, 0);
  CHECK(crf_nll(single, zeros) == 0.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto steps = static_cast<std::size_t>(rng.uniform_int(1, 10));
    const auto k = static_cast<std::size_t>(rng.uniform_int(1, 5));
    const auto l = random_lattice(rng, steps, k, 5.0);
    std::vector<std::int32_t> gold(steps);
    for (auto& g : gold) g = static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
    CHECK(crf_nll(l, gold) >= 0.0);
  }
  const auto l = random_lattice(rng, 3, 2);
  CHECK_THROWS_AS(crf_nll(l, std::vector<std::int32_t>{0, 1}), Error);
  CHECK_THROWS_AS(crf_nll(l, std::vector<std::int32_t>{0, 1, 2}), Error);
  TagLattice<double> bad{Tensor<double>({2, 2}), Tensor<double>({3, 3})};
  CHECK_THROWS_AS(crf_log_partition(bad), Error);
  bad.transitions = Tensor<double>({2, 2});
  bad.emissions[1] = NAN;
  CHECK_THROWS_AS(crf_log_partition(bad), Error);
}

TEST_CASE("crf_nll gradient: marginals minus gold, checked by finite differences") {
  Rng rng(13);
  const auto l = random_lattice(rng, 5, 4);
  std::vector<std::int32_t> gold{1, 0, 3, 3, 2};
  Tape<double> tape;
  auto e = tape.input(l.emissions);
  auto tr = tape.input(l.transitions);
  tape.backward(crf_nll(e, tr, gold));
  Tensor<double> expected = crf_marginals(l);
  for (std::size_t t = 0; t < 5; ++t) expected.at(t, static_cast<std::size_t>(gold[t])) -= 1.0;
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(tape.grad(e)[i] == doctest::Approx(expected[i]).epsilon(1e-12));

  Tensor<double> em = l.emissions, trans = l.transitions;
  std::vector<Tensor<double>*> points{&em, &trans};
  const auto report = grad_check(
      [&](Tape<double>& t, std::span<const Var<double>> leaves) { return crf_nll(leaves[0], leaves[1], gold); },
      std::span<Tensor<double>* const>(points));
  CHECK(report.coords_checked == 36);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("grad_check: full tiny model with multilabel, hierarchical and CRF heads") {
  Encoder<double> model = Encoder<float>(tiny(), 31).cast<double>();
  auto enc_params = model.parameters();
  GradCheckOptions opt;
  opt.epsilon = 1e-6;
  opt.max_coords_per_tensor = 3;
  Rng rng(14);

  SUBCASE("multilabel") {
    MultiLabelHead<double> head(64, 3, 1);
    std::vector<EncodedPair> pairs{random_fact(rng, 6, 9), random_fact(rng, 3, 9)};
    const auto batch = EncoderBatch::from_pairs(pairs);
    Tensor<double> y({2, 3}, {1, 0, 1, 0, 0, 1});
    auto params = enc_params;
    for (auto* p : head.parameters()) params.push_back(p);
    const auto report = grad_check(
        [&](Tape<double>& tape) {
          return multilabel_loss(multilabel_logits(tape, model.forward(tape, batch).cls, head), y);
        },
        std::span<Parameter<double>* const>(params), opt);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("hierarchical") {
    HierPooler<double> pooler(64, 2);
    MultiLabelHead<double> head(64, 1, 3);
    std::vector<EncodedPair> facts{random_fact(rng, 4, 8), random_fact(rng, 6, 8), random_fact(rng, 2, 8)};
    Tensor<double> y({1, 1}, {1.0});
    auto params = enc_params;
    for (auto* p : pooler.parameters()) params.push_back(p);
    for (auto* p : head.parameters()) params.push_back(p);
    const auto report = grad_check(
        [&](Tape<double>& tape) {
          const auto doc = hier_encode(tape, model, facts, pooler, 4).document;
          return multilabel_loss(multilabel_logits(tape, doc, head), y);
        },
        std::span<Parameter<double>* const>(params), opt);
    CHECK(report.max_rel_error < 1e-4);
  }
  SUBCASE("crf") {
    MultiLabelHead<double> emit(64, 5, 4);  // a linear layer to K tag scores
    Parameter<double> transitions("crf.transitions", Tensor<double>({5, 5}));
    for (auto& x : transitions.value.data()) x = rng.normal(0.0, 0.5);
    const auto pair = random_fact(rng, 7, 10);
    const auto batch = EncoderBatch::from_pairs(std::span<const EncodedPair>(&pair, 1));
    std::vector<std::size_t> rows{1, 2, 4, 5, 7};
    std::vector<std::int32_t> gold{1, 2, 0, 3, 4};
    auto params = enc_params;
    params.push_back(&emit.weight);
    params.push_back(&emit.bias);
    params.push_back(&transitions);
    const auto report = grad_check(
        [&](Tape<double>& tape) {
          auto h = gather_rows(model.forward(tape, batch).hidden, std::span<const std::size_t>(rows));
          return crf_nll(multilabel_logits(tape, h, emit), tape.param(transitions), gold);
        },
        std::span<Parameter<double>* const>(params), opt);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("BIO tag sets and word alignment") {
  const std::vector<std::vector<std::string>> seqs{{"O", "B-LAW", "I-LAW"}, {"B-DATE", "O"}};
  const TagSet tags = TagSet::from_sequences(seqs);
  CHECK(tags.names() == std::vector<std::string>{"O", "B-DATE", "I-DATE", "B-LAW", "I-LAW"});
  CHECK(tags.id("I-LAW") == 4);
  CHECK(tags.name(1) == "B-DATE");
  CHECK_THROWS_AS(tags.id("B-PARTY"), Error);
  const std::vector<std::vector<std::string>> bad{{"X-LAW"}};
  CHECK_THROWS_AS(TagSet::from_sequences(bad), Error);
  CHECK_THROWS_AS(parse_bio("B-"), Error);

  const Vocab vocab = Vocab::train(std::vector<std::string>{"alpha beta gamma alpha beta", "delta alpha"}, 30, 0);
  const std::vector<std::string> words{"alpha", "beta", "zzz", "delta"};
  const auto wp = align_words(vocab, words, 32);
  REQUIRE(wp.first_subword.size() == 4);
  CHECK(wp.first_subword[0] == 1);
  CHECK(wp.pair.ids[0] == special::kCls);
  for (std::size_t i = 1; i < 4; ++i) CHECK(wp.first_subword[i] > wp.first_subword[i - 1]);
  const auto cut = align_words(vocab, words, 6);
  CHECK(cut.first_subword.size() < 4);
  CHECK(cut.pair.length() == 6);
}
