#pragma once

#include <cstdint>

#include "slab/tune/grid.hpp"

namespace slab {

// Least-squares linear probe trained by plain minibatch gradient descent on
// features x = y * s * e_0 + z, with y in {-1, +1} and z ~ N(0, 1) on the
// remaining axes. Every minibatch Hessian has top eigenvalue ~ s^2, so a step
// size lr is stable iff lr * s^2 < 2. The default curvature puts that
// boundary at 1.33e-5: only learning rates <= 1e-5 converge, larger ones blow
// up to a non-finite loss. Dropout and epoch policy are accepted but the
// probe has no dropout site. Metric: dev accuracy of sign(w . x).
struct ProbeSpec {
  std::size_t dims = 8;
  std::size_t train = 2048;
  std::size_t dev = 256;
  double curvature = 1.5e5;  // s^2
  std::uint64_t data_seed = 0;
};

class UnstableProbeTask : public FineTuneTask {
 public:
  explicit UnstableProbeTask(ProbeSpec spec = {});
  std::string id() const override { return "unstable-probe"; }
  std::string metric_name() const override { return "accuracy"; }
  std::unique_ptr<TrialModel> instantiate(const TrialConfig& config) const override;

  // Analytic stability bound 2 / s^2.
  double critical_learning_rate() const { return 2.0 / spec_.curvature; }

 private:
  ProbeSpec spec_;
  std::vector<float> train_x_, dev_x_;
  std::vector<float> train_y_, dev_y_;
};

}  // namespace slab
