#include "slab/tune/constructed.hpp"

#include <cmath>

#include "slab/error.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

namespace {

void draw(Rng& rng, std::size_t n, std::size_t dims, double s, std::vector<float>& x, std::vector<float>& y) {
  x.assign(n * dims, 0.0f);
  y.assign(n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.bernoulli(0.5) ? 1.0f : -1.0f;
    x[i * dims] = static_cast<float>(y[i] * s);
    for (std::size_t d = 1; d < dims; ++d) x[i * dims + d] = static_cast<float>(rng.normal());
  }
}

class ProbeModel : public TrialModel {
 public:
  ProbeModel(const std::vector<float>& tx, const std::vector<float>& ty, const std::vector<float>& dx,
             const std::vector<float>& dy, std::size_t dims)
      : tx_(tx), ty_(ty), dx_(dx), dy_(dy), dims_(dims), w_(dims, 0.0f), best_(w_) {}

  std::size_t train_size() const override { return ty_.size(); }

  double train_step(std::span<const std::size_t> batch, double learning_rate, std::uint64_t) override {
    std::vector<float> grad(dims_, 0.0f);
    float loss = 0.0f;
    const float inv = 1.0f / static_cast<float>(batch.size());
    for (auto i : batch) {
      const float r = predict(&tx_[i * dims_]) - ty_[i];
      loss += 0.5f * r * r * inv;
      for (std::size_t d = 0; d < dims_; ++d) grad[d] += r * tx_[i * dims_ + d] * inv;
    }
    for (std::size_t d = 0; d < dims_; ++d) w_[d] -= static_cast<float>(learning_rate) * grad[d];
    return loss;
  }

  Evaluation evaluate_dev() override {
    Evaluation e;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dy_.size(); ++i) {
      const float f = predict(&dx_[i * dims_]);
      const float r = f - dy_[i];
      e.loss += 0.5 * static_cast<double>(r) * static_cast<double>(r);
      correct += (f >= 0.0f ? 1.0f : -1.0f) == dy_[i];
    }
    e.loss /= static_cast<double>(dy_.size());
    e.metric = static_cast<double>(correct) / static_cast<double>(dy_.size());
    return e;
  }

  void remember_best() override { best_ = w_; }
  void restore_best() override { w_ = best_; }

 private:
  float predict(const float* x) const {
    float f = 0.0f;
    for (std::size_t d = 0; d < dims_; ++d) f += w_[d] * x[d];
    return f;
  }

  const std::vector<float>& tx_;
  const std::vector<float>& ty_;
  const std::vector<float>& dx_;
  const std::vector<float>& dy_;
  std::size_t dims_;
  std::vector<float> w_, best_;
};

}  // namespace

UnstableProbeTask::UnstableProbeTask(ProbeSpec spec) : spec_(spec) {
  require(spec.dims >= 1 && spec.train >= 1 && spec.dev >= 1 && spec.curvature > 0.0, ErrorCode::kInvalidArgument,
          "unstable probe: dims, sizes and curvature must be positive");
  Rng rng(mix_seed(spec.data_seed, 0x9b));
  const double s = std::sqrt(spec.curvature);
  draw(rng, spec.train, spec.dims, s, train_x_, train_y_);
  draw(rng, spec.dev, spec.dims, s, dev_x_, dev_y_);
}

std::unique_ptr<TrialModel> UnstableProbeTask::instantiate(const TrialConfig&) const {
  return std::make_unique<ProbeModel>(train_x_, train_y_, dev_x_, dev_y_, spec_.dims);
}

}  // namespace slab
