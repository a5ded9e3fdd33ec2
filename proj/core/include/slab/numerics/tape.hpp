#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "slab/numerics/tensor.hpp"

namespace slab {

// A trainable tensor with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <class T>
class Tape;

// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

// Records primitive operations in execution order. backward() walks the
// record in exact reverse, accumulating gradients into parents; parameter
// leaves have their gradient added to Parameter::grad.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> param(Parameter<T>& p);
  Var<T> constant(Tensor<T> value);
  // Leaf that owns its value; its gradient stays on the tape (see grad()).
  Var<T> input(Tensor<T> value, bool requires_grad = true);
  Var<T> record(Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad_ready; }

  // Gradient buffer of a node, zero-allocated on first use.
  Tensor<T>& grad(std::size_t id);
  const Tensor<T>& grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->grad : n.grad;
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps. The loss must hold exactly one
  // element. When visit_order is given, every node whose backward rule ran is
  // appended in the order visited.
  void backward(Var<T> loss, std::vector<std::size_t>* visit_order = nullptr);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool grad_ready = false;
    bool needs_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace slab
