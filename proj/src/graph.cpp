#include "mtta/graph.hpp"

#include <string>

namespace mtta::ad {

const Array& Var::value() const {
  if (graph == nullptr) throw ShapeError("Var: not attached to a graph");
  return graph->value(*this);
}

void Graph::check_owned(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw ShapeError("Var does not belong to this graph");
}

Var Graph::input(Array value, bool requires_grad) {
  nodes_.push_back(Node{"input", {}, std::move(value), {}, requires_grad});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string_view kind, std::vector<std::size_t> inputs, Array value, Backward backward) {
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ShapeError(std::string(kind) + ": input id out of range");
    needs = needs || nodes_[id].needs_grad;
  }
  if (!backward) needs = false;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(backward), needs});
  return Var{this, nodes_.size() - 1};
}

Var Graph::detach(Var x) {
  check_owned(x);
  Array value = nodes_[x.id].value;
  nodes_.push_back(Node{"stop_gradient", {x.id}, std::move(value), {}, false});
  return Var{this, nodes_.size() - 1};
}

const Array& Graph::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

Array Graph::grad(Var v) const {
  check_owned(v);
  if (v.id < grads_.size() && !grads_[v.id].empty()) return Array(nodes_[v.id].value.shape(), grads_[v.id]);
  return Array(nodes_[v.id].value.shape(), 0.0);
}

std::span<double> Graph::grad_acc(std::size_t id) {
  if (!nodes_.at(id).needs_grad) return {};
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
  return g;
}

void Graph::backward(Var root) {
  check_owned(root);
  if (backward_done_) throw ShapeError("backward: gradients already populated; call reset_gradients first");
  if (nodes_[root.id].value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(nodes_[root.id].value.shape()));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), {});
  if (!nodes_[root.id].needs_grad) return;
  grads_[root.id].assign(1, 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || !node.needs_grad || grads_[i].empty()) continue;
    // grads_ is sized up front, so this span stays valid while inputs accumulate.
    node.backward(*this, std::span<const double>(grads_[i]));
  }
}

void Graph::reset_gradients() {
  grads_.clear();
  backward_done_ = false;
}

}  // namespace mtta::ad
