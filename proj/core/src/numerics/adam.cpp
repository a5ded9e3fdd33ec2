#include "slab/numerics/adam.hpp"

#include <cmath>

namespace slab {

template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state) {
  require(params.size() == grads.size(), ErrorCode::kShapeMismatch, "adam_step: params/grads count differ");
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorCode::kShapeMismatch,
          "adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    require(params[i]->shape() == grads[i]->shape() && state.m[i].shape() == params[i]->shape() &&
                state.v[i].shape() == params[i]->shape(),
            ErrorCode::kShapeMismatch, "adam_step: shape mismatch at tensor " + std::to_string(i));
  }

  state.step += 1;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
  const T lr = static_cast<T>(h.learning_rate), eps = static_cast<T>(h.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    T* p = params[i]->data().data();
    const T* g = grads[i]->data().data();
    T* m = state.m[i].data().data();
    T* v = state.v[i].data().data();
    const std::size_t n = params[i]->size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      const T mhat = m[k] / c1;
      const T vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  std::vector<Tensor<T>*> values;
  std::vector<const Tensor<T>*> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (Parameter<T>* p : params) {
    values.push_back(&p->value);
    grads.push_back(p->requires_grad ? &p->grad : nullptr);
  }
  adam_step<T>(std::span<Tensor<T>* const>(values), std::span<const Tensor<T>* const>(grads), state);
}

template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>* const>,
                               AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>* const>,
                                AdamState<double>&);
template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&);
template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&);

}  // namespace slab
