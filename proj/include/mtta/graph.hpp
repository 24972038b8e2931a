#pragma once

// Reverse-mode differentiation over dense Arrays.
//
// A Graph is an append-only tape. Every op appends a node holding its
// forward value and a closure that pushes the node's output gradient into
// its inputs. Nodes only reference earlier ids, so the tape is acyclic by
// construction and backward() is a single reverse sweep.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mtta/array.hpp"

namespace mtta::ad {

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

class Graph {
 public:
  // Called with the graph and the node's accumulated output gradient.
  using Backward = std::function<void(Graph&, std::span<const double>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Array value, bool requires_grad = true);
  Var constant(Array value) { return input(std::move(value), false); }

  // Appends an op node. `backward` may be empty for ops with no differentiable inputs.
  Var record(std::string_view kind, std::vector<std::size_t> inputs, Array value, Backward backward);
  // Same forward value, but the node never propagates gradient.
  Var detach(Var x);

  const Array& value(Var v) const;
  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  std::string_view kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }

  // Gradient of the last backward root w.r.t. v; zeros when v is unreachable.
  Array grad(Var v) const;

  void backward(Var root);
  void reset_gradients();

  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  // Accumulator for an input's gradient, or an empty span when the input needs none.
  std::span<double> grad_acc(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view kind;
    std::vector<std::size_t> inputs;
    Array value;
    Backward backward;
    bool needs_grad = false;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;  // stable references across appends
  std::vector<std::vector<double>> grads_;
  bool backward_done_ = false;
};

}  // namespace mtta::ad
