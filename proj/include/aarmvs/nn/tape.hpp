#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "aarmvs/core/tensor.hpp"

namespace aarmvs {

// Reverse-mode autodiff over dense tensors.
//
// Every differentiable op appends one node to the tape; node ids are a
// topological order by construction. backward() sweeps ids from the loss
// down to 0, calling each node's closure to scatter into parent gradients.
// Interior gradients are released as soon as their node has been processed,
// so only leaf (parameter) gradients survive the sweep.
//
// Running ops without a tape (all inputs untracked) computes values only;
// intermediates are freed by shared_ptr scope. That is the streaming
// inference mode: nothing is retained across recurrence steps except what
// the caller keeps.
template <typename T>
class Tape {
 public:
  using TensorPtr = std::shared_ptr<Tensor<T>>;
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  struct Node {
    TensorPtr value;
    BackwardFn backward;  // null for leaves
  };

  int leaf(TensorPtr v) {
    nodes_.push_back(Node{std::move(v), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push(TensorPtr v, BackwardFn fn) {
    nodes_.push_back(Node{std::move(v), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& value(int id) const { return *nodes_[static_cast<size_t>(id)].value; }
  size_t size() const { return nodes_.size(); }

  // Gradient buffer for a node, allocated zero on first touch.
  Tensor<T>& grad(int id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (!g) g = std::make_shared<Tensor<T>>(nodes_[static_cast<size_t>(id)].value->shape);
    return *g;
  }
  bool has_grad(int id) const { return static_cast<bool>(grads_[static_cast<size_t>(id)]); }

  // Backpropagate from a scalar root. Leaf gradients remain readable via
  // grad() until reset().
  void backward(int root) {
    if (root < 0 || root >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Tape::backward: bad root id");
    if (nodes_[static_cast<size_t>(root)].value->numel() != 1)
      throw std::invalid_argument("Tape::backward: root must be scalar");
    grads_.assign(nodes_.size(), nullptr);
    grad(root)[0] = T(1);
    for (int id = root; id >= 0; --id) {
      auto& node = nodes_[static_cast<size_t>(id)];
      auto& g = grads_[static_cast<size_t>(id)];
      if (!g) continue;
      if (node.backward) {
        node.backward(*this, *g);
        g.reset();  // interior gradient no longer needed
      }
    }
  }

  void reset() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  std::vector<Node> nodes_;
  std::vector<TensorPtr> grads_;
};

// A tensor value with optional tape tracking. Copying a Var shares the
// underlying tensor.
template <typename T>
struct Var {
  std::shared_ptr<Tensor<T>> v;
  Tape<T>* tape = nullptr;
  int id = -1;

  Var() = default;
  Var(std::shared_ptr<Tensor<T>> val, Tape<T>* t, int i) : v(std::move(val)), tape(t), id(i) {}

  const Tensor<T>& val() const { return *v; }
  const Shape& shape() const { return v->shape; }
  bool tracked() const { return tape != nullptr && id >= 0; }
};

template <typename T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::make_shared<Tensor<T>>(std::move(t)), nullptr, -1);
}

template <typename T>
Var<T> leaf(Tape<T>& tape, std::shared_ptr<Tensor<T>> t) {
  int id = tape.leaf(t);
  return Var<T>(std::move(t), &tape, id);
}

namespace detail {

// Result either joins the tape of its tracked inputs or stays untracked.
template <typename T>
Tape<T>* result_tape(std::initializer_list<const Var<T>*> inputs) {
  for (const Var<T>* in : inputs)
    if (in->tracked()) return in->tape;
  return nullptr;
}

template <typename T>
Var<T> attach(Tape<T>* tape, std::shared_ptr<Tensor<T>> out, typename Tape<T>::BackwardFn fn) {
  if (!tape) return Var<T>(std::move(out), nullptr, -1);
  int id = tape->push(out, std::move(fn));
  return Var<T>(std::move(out), tape, id);
}

}  // namespace detail

}  // namespace aarmvs
