#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fadpnet/tensor.hpp"

namespace fadp {

// Named learnable tensor with a persistent gradient accumulator. Owned by a
// ParamRegistry (see modules.hpp); tapes reference it by pointer.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool needs_grad = false;
  bool grad_init = false;
  std::function<void()> backprop;

  Tensor<T>& ensure_grad() {
    if (!grad_init) {
      grad = Tensor<T>(value.shape);
      grad_init = true;
    }
    return grad;
  }
};

template <typename T>
struct Var {
  Node<T>* node = nullptr;

  bool defined() const { return node != nullptr; }
  const Tensor<T>& val() const { return node->value; }
  const Shape& shape() const { return node->value.shape; }
  bool needs_grad() const { return node->needs_grad; }
  // Gradient after Tape::backward (valid on leaves created with needs_grad).
  const Tensor<T>& grad() const { return node->grad; }
};

// Define-by-run tape. Creation order is a topological order, so backward is a
// single reverse sweep. One tape per forward pass; nodes live until the tape
// is destroyed.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Node<T>* alloc(Tensor<T> value, bool needs_grad) {
    nodes_.push_back(std::make_unique<Node<T>>());
    Node<T>* n = nodes_.back().get();
    n->value = std::move(value);
    n->needs_grad = needs_grad && grad_enabled_;
    return n;
  }

  Var<T> constant(Tensor<T> value) { return Var<T>{alloc(std::move(value), false)}; }

  Var<T> input(Tensor<T> value, bool needs_grad = false) {
    return Var<T>{alloc(std::move(value), needs_grad)};
  }

  Var<T> param(Param<T>& p) {
    Node<T>* n = alloc(p.value, true);
    if (n->needs_grad) {
      Param<T>* pp = &p;
      n->backprop = [n, pp] {
        if (pp->grad.numel() != n->value.numel()) pp->grad = Tensor<T>(n->value.shape);
        const T* g = n->grad.ptr();
        T* dst = pp->grad.ptr();
        const int64_t m = n->grad.numel();
        for (int64_t i = 0; i < m; ++i) dst[i] += g[i];
      };
    }
    return Var<T>{n};
  }

  void backward(Var<T> loss) {
    FADP_CHECK_SHAPE(loss.defined() && loss.val().numel() == 1,
                     "backward expects a defined scalar loss");
    loss.node->ensure_grad().fill(T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* n = it->get();
      if (n->grad_init && n->backprop) n->backprop();
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node<T>>> nodes_;
  bool grad_enabled_;
};

}  // namespace fadp
