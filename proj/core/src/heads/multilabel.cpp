#include "slab/heads/multilabel.hpp"

#include <cmath>

#include "slab/encoder/model.hpp"
#include "slab/numerics/ops.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {

template <class T>
MultiLabelHead<T>::MultiLabelHead(std::size_t hidden, std::size_t labels, std::uint64_t seed)
    : weight("head.weight", Tensor<T>({hidden, labels})), bias("head.bias", Tensor<T>({labels})) {
  require(hidden >= 1 && labels >= 1, ErrorCode::kInvalidArgument, "multilabel head needs HU >= 1 and L >= 1");
  Rng rng(seed);
  for (auto& w : weight.value.data()) w = static_cast<T>(rng.normal(0.0, kInitStddev));
}

template <class T>
Var<T> multilabel_logits(Tape<T>& tape, Var<T> cls, MultiLabelHead<T>& head) {
  return add_bias(matmul(cls, tape.param(head.weight)), tape.param(head.bias));
}

template <class T>
Tensor<T> multilabel_scores(const Tensor<T>& cls, const MultiLabelHead<T>& head) {
  const std::size_t hidden = head.weight.value.dim(0), labels = head.labels();
  require(cls.cols() == hidden, ErrorCode::kShapeMismatch,
          "multilabel_scores: input width " + std::to_string(cls.cols()) + " != " + std::to_string(hidden));
  Tensor<T> out({cls.rows(), labels});
  for (std::size_t r = 0; r < cls.rows(); ++r) {
    for (std::size_t l = 0; l < labels; ++l) {
      T z = head.bias.value[l];
      for (std::size_t h = 0; h < hidden; ++h) z += cls.at(r, h) * head.weight.value.at(h, l);
      out.at(r, l) = z >= 0 ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
    }
  }
  return out;
}

template <class T>
Var<T> multilabel_loss(Var<T> logits, const Tensor<T>& targets) {
  require(targets.shape() == logits.shape(), ErrorCode::kShapeMismatch,
          "multilabel_loss: targets " + shape_string(targets.shape()) + " do not match logits " +
              shape_string(logits.shape()));
  for (T y : targets.data())
    require(y == T{0} || y == T{1}, ErrorCode::kInvalidArgument, "multilabel_loss: targets must be 0 or 1");
  return bce_with_logits(logits, targets);
}

#define SLAB_INSTANTIATE_MULTILABEL(T)                                                  \
  template struct MultiLabelHead<T>;                                                    \
  template Var<T> multilabel_logits<T>(Tape<T>&, Var<T>, MultiLabelHead<T>&);           \
  template Tensor<T> multilabel_scores<T>(const Tensor<T>&, const MultiLabelHead<T>&);  \
  template Var<T> multilabel_loss<T>(Var<T>, const Tensor<T>&);

SLAB_INSTANTIATE_MULTILABEL(float)
SLAB_INSTANTIATE_MULTILABEL(double)

}  // namespace slab
