#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slab/numerics/tape.hpp"

namespace slab {

// Scores for one sequence: emissions [steps, K] and transitions [K, K]
// (transitions.at(i, j) scores tag i followed by tag j). There are no start or
// end transitions.
template <class T>
struct TagLattice {
  Tensor<T> emissions;
  Tensor<T> transitions;

  std::size_t steps() const { return emissions.rows(); }
  std::size_t tags() const { return emissions.cols(); }
  // Throws kShapeMismatch / kEmptyInput / kNonFinite.
  void validate() const;
};

template <class T>
T crf_path_score(const TagLattice<T>& lattice, std::span<const std::int32_t> path);

// Forward recursion in log space.
template <class T>
T crf_log_partition(const TagLattice<T>& lattice);

// Per-step tag marginals [steps, K].
template <class T>
Tensor<T> crf_marginals(const TagLattice<T>& lattice);

template <class T>
struct ViterbiPath {
  std::vector<std::int32_t> tags;
  T score = 0;
};

// Among equally scoring paths, prefers the lowest tag at the latest step
// where they differ.
template <class T>
ViterbiPath<T> crf_viterbi(const TagLattice<T>& lattice);

// logZ - score(gold). Throws kShapeMismatch when gold.size() != steps and
// kInvalidArgument for a tag outside [0, K).
template <class T>
T crf_nll(const TagLattice<T>& lattice, std::span<const std::int32_t> gold);

// Taped form; gradients flow into both emissions [steps, K] and transitions.
template <class T>
Var<T> crf_nll(Var<T> emissions, Var<T> transitions, std::span<const std::int32_t> gold);

}  // namespace slab
