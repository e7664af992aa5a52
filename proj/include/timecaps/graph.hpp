#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "timecaps/error.hpp"
#include "timecaps/tensor.hpp"

namespace timecaps {

class Graph;

// Handle to a node on a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
};

// Define-by-run reverse-mode tape. Nodes are appended in execution order, so
// the node list is already topologically sorted. One graph per forward pass;
// backward() may run once.
class Graph {
 public:
  // Receives the upstream gradient of the node it belongs to.
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad && grad_enabled_, {}});
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. The backward closure is only kept when some input
  // participates in differentiation.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) {
        if (v.graph != this) throw ArgumentError("variable belongs to a different graph");
        needs = needs || nodes_[v.id].requires_grad;
      }
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of a node after backward(); zeros when nothing flowed into it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
  }

  // Adds `g` into the gradient accumulator of `v` (no-op when v is constant).
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.data();
    const auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Mutable accumulator access for kernels that scatter directly.
  Tensor* grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return &n.grad;
  }

  void backward(Var loss) {
    if (loss.graph != this) throw ArgumentError("loss belongs to a different graph");
    if (consumed_) throw ArgumentError("graph already consumed by backward()");
    if (value(loss).numel() != 1) {
      throw ArgumentError("backward() needs a scalar loss, got shape " + to_string(value(loss).shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor(value(loss).shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // Closures only write to earlier nodes; the node list is not resized here.
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return graph->value(*this); }
inline bool Var::requires_grad() const { return graph->requires_grad(*this); }

}  // namespace timecaps
