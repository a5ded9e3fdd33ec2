#include "slab/numerics/tape.hpp"

namespace slab {

template <class T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Node node;
  node.external = &p.value;
  node.param = &p;
  node.needs_grad = p.requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return input(std::move(value), false);
}

template <class T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  for (std::size_t p : parents) {
    require(p < nodes_.size(), ErrorCode::kInvalidArgument, "tape parent out of range");
    node.needs_grad = node.needs_grad || nodes_[p].needs_grad;
  }
  node.parents = std::move(parents);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

template <class T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) {
    // Parameter leaves accumulate straight into the parameter's buffer.
    if (n.param->grad.shape() != n.param->value.shape()) n.param->grad = Tensor<T>(n.param->value.shape());
    n.grad_ready = true;
    return n.param->grad;
  }
  if (!n.grad_ready) {
    n.grad = Tensor<T>(value(id).shape());
    n.grad_ready = true;
  }
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss, std::vector<std::size_t>* visit_order) {
  require(loss.tape == this, ErrorCode::kInvalidArgument, "loss belongs to a different tape");
  require(value(loss.id).size() == 1, ErrorCode::kShapeMismatch,
          "backward() needs a scalar loss, got shape " + shape_string(value(loss.id).shape()));
  grad(loss.id)[0] = T{1};
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad_ready || !n.needs_grad) continue;
    if (n.backward) {
      n.backward(*this, i);
      if (visit_order) visit_order->push_back(i);
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace slab
