#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "slab/numerics/tape.hpp"

namespace slab {

// Builds a scalar loss on `tape` from the given leaves.
using LossBuilder = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor (always including the largest-gradient one).
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t tensor_index = 0;  // where the maximum occurred
  std::size_t coord = 0;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients with central differences
// (f(x + e) - f(x - e)) / 2e, in 64-bit. The error for one coordinate is
// |analytic - numeric| / max(1, |analytic|). Never throws on a large error;
// the caller judges the report. Leaves in `points` are perturbed in place
// and restored.
GradCheckReport grad_check(const LossBuilder& fn, std::span<Tensor<double>* const> points,
                           const GradCheckOptions& options = {});

// Same check over model parameters: `fn` reads the parameters itself (via
// Tape::param), so perturbing Parameter::value perturbs the loss.
using ParamLossBuilder = std::function<Var<double>(Tape<double>&)>;
GradCheckReport grad_check(const ParamLossBuilder& fn, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

// Single-tensor form.
double grad_check(const LossBuilder& fn, const Tensor<double>& point, double epsilon);

}  // namespace slab
