#include "slab/heads/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace slab {

namespace {

template <class T>
T log_sum_exp(std::span<const T> xs) {
  const T m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  T s = 0;
  for (T x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// alpha[t, j] = log sum over paths ending in j at t.
template <class T>
Tensor<T> forward_table(const TagLattice<T>& l) {
  const std::size_t n = l.steps(), k = l.tags();
  Tensor<T> alpha({n, k});
  for (std::size_t j = 0; j < k; ++j) alpha.at(0, j) = l.emissions.at(0, j);
  std::vector<T> terms(k);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) terms[i] = alpha.at(t - 1, i) + l.transitions.at(i, j);
      alpha.at(t, j) = log_sum_exp<T>(terms) + l.emissions.at(t, j);
    }
  }
  return alpha;
}

// beta[t, i] = log sum over continuations from i at t (excluding emit[t, i]).
template <class T>
Tensor<T> backward_table(const TagLattice<T>& l) {
  const std::size_t n = l.steps(), k = l.tags();
  Tensor<T> beta({n, k});
  std::vector<T> terms(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j)
        terms[j] = l.transitions.at(i, j) + l.emissions.at(t + 1, j) + beta.at(t + 1, j);
      beta.at(t, i) = log_sum_exp<T>(terms);
    }
  }
  return beta;
}

void check_gold(std::span<const std::int32_t> gold, std::size_t steps, std::size_t k) {
  require(gold.size() == steps, ErrorCode::kShapeMismatch,
          "crf: gold path has " + std::to_string(gold.size()) + " tags for " + std::to_string(steps) + " steps");
  for (auto g : gold)
    require(g >= 0 && static_cast<std::size_t>(g) < k, ErrorCode::kInvalidArgument,
            "crf: gold tag " + std::to_string(g) + " outside [0, " + std::to_string(k) + ")");
}

}  // namespace

template <class T>
void TagLattice<T>::validate() const {
  require(emissions.rank() == 2 && transitions.rank() == 2, ErrorCode::kShapeMismatch,
          "crf: emissions and transitions must be matrices");
  require(steps() >= 1 && tags() >= 1, ErrorCode::kEmptyInput, "crf: lattice needs at least one step and one tag");
  require(transitions.dim(0) == tags() && transitions.dim(1) == tags(), ErrorCode::kShapeMismatch,
          "crf: transitions " + shape_string(transitions.shape()) + " do not match " + std::to_string(tags()) +
              " tags");
  require(emissions.all_finite() && transitions.all_finite(), ErrorCode::kNonFinite, "crf: non-finite score");
}

template <class T>
T crf_path_score(const TagLattice<T>& l, std::span<const std::int32_t> path) {
  l.validate();
  check_gold(path, l.steps(), l.tags());
  T s = l.emissions.at(0, static_cast<std::size_t>(path[0]));
  for (std::size_t t = 1; t < path.size(); ++t)
    s += l.transitions.at(static_cast<std::size_t>(path[t - 1]), static_cast<std::size_t>(path[t])) +
         l.emissions.at(t, static_cast<std::size_t>(path[t]));
  return s;
}

template <class T>
T crf_log_partition(const TagLattice<T>& l) {
  l.validate();
  const Tensor<T> alpha = forward_table(l);
  return log_sum_exp<T>(alpha.row(l.steps() - 1));
}

template <class T>
Tensor<T> crf_marginals(const TagLattice<T>& l) {
  l.validate();
  const Tensor<T> alpha = forward_table(l), beta = backward_table(l);
  const T log_z = log_sum_exp<T>(alpha.row(l.steps() - 1));
  Tensor<T> out({l.steps(), l.tags()});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(alpha[i] + beta[i] - log_z);
  return out;
}

template <class T>
ViterbiPath<T> crf_viterbi(const TagLattice<T>& l) {
  l.validate();
  const std::size_t n = l.steps(), k = l.tags();
  std::vector<T> best(l.emissions.row(0).begin(), l.emissions.row(0).end()), next(k);
  std::vector<std::int32_t> back(n * k, 0);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t arg = 0;
      T top = best[0] + l.transitions.at(0, j);
      for (std::size_t i = 1; i < k; ++i) {
        const T s = best[i] + l.transitions.at(i, j);
        if (s > top) top = s, arg = i;
      }
      next[j] = top + l.emissions.at(t, j);
      back[t * k + j] = static_cast<std::int32_t>(arg);
    }
    best.swap(next);
  }
  ViterbiPath<T> out;
  out.tags.resize(n);
  const auto last = std::max_element(best.begin(), best.end());
  out.score = *last;
  out.tags[n - 1] = static_cast<std::int32_t>(last - best.begin());
  for (std::size_t t = n - 1; t > 0; --t)
    out.tags[t - 1] = back[t * k + static_cast<std::size_t>(out.tags[t])];
  return out;
}

template <class T>
T crf_nll(const TagLattice<T>& l, std::span<const std::int32_t> gold) {
  check_gold(gold, l.steps(), l.tags());
  // logZ >= score(gold) exactly; clamp the rounding residue.
  return std::max(T{0}, crf_log_partition(l) - crf_path_score(l, gold));
}

template <class T>
Var<T> crf_nll(Var<T> emissions, Var<T> transitions, std::span<const std::int32_t> gold) {
  Tape<T>& tape = *emissions.tape;
  TagLattice<T> lattice{emissions.value(), transitions.value()};
  const T loss = crf_nll(lattice, gold);
  std::vector<std::int32_t> path(gold.begin(), gold.end());
  return tape.record(Tensor<T>::scalar(loss), {emissions.id, transitions.id},
                     [e = emissions.id, tr = transitions.id, path](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    TagLattice<T> l{t.value(e), t.value(tr)};
    const std::size_t n = l.steps(), k = l.tags();
    const Tensor<T> alpha = forward_table(l), beta = backward_table(l);
    const T log_z = log_sum_exp<T>(alpha.row(n - 1));
    if (t.needs_grad(e)) {
      Tensor<T>& de = t.grad(e);
      for (std::size_t i = 0; i < alpha.size(); ++i) de[i] += g * std::exp(alpha[i] + beta[i] - log_z);
      for (std::size_t s = 0; s < n; ++s) de.at(s, static_cast<std::size_t>(path[s])) -= g;
    }
    if (t.needs_grad(tr)) {
      Tensor<T>& dt = t.grad(tr);
      for (std::size_t s = 1; s < n; ++s) {
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T p = std::exp(alpha.at(s - 1, i) + l.transitions.at(i, j) + l.emissions.at(s, j) +
                                 beta.at(s, j) - log_z);
            dt.at(i, j) += g * p;
          }
        }
        dt.at(static_cast<std::size_t>(path[s - 1]), static_cast<std::size_t>(path[s])) -= g;
      }
    }
  });
}

#define SLAB_INSTANTIATE_CRF(T)                                                      \
  template struct TagLattice<T>;                                                     \
  template T crf_path_score<T>(const TagLattice<T>&, std::span<const std::int32_t>); \
  template T crf_log_partition<T>(const TagLattice<T>&);                              \
  template Tensor<T> crf_marginals<T>(const TagLattice<T>&);                         \
  template ViterbiPath<T> crf_viterbi<T>(const TagLattice<T>&);                      \
  template T crf_nll<T>(const TagLattice<T>&, std::span<const std::int32_t>);        \
  template Var<T> crf_nll<T>(Var<T>, Var<T>, std::span<const std::int32_t>);

SLAB_INSTANTIATE_CRF(float)
SLAB_INSTANTIATE_CRF(double)

}  // namespace slab
