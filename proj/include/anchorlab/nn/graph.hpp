#pragma once

#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "anchorlab/nn/param_store.hpp"
#include "anchorlab/nn/tensor.hpp"

namespace anchorlab::nn {

template <class T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, int id) : g_(g), id_(id) {}

  bool valid() const { return g_ != nullptr; }
  int id() const { return id_; }
  Graph<T>& graph() const { return *g_; }
  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;
  // Gradient accumulated by the last backward(); zeros if none reached this node.
  BasicTensor<T> grad() const;

 private:
  Graph<T>* g_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in creation order and backward visits
// them in exactly the reverse order, so accumulation is bit-reproducible.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  struct Node {
    BasicTensor<T> value;
    std::vector<int> inputs;
    BackwardFn backward;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string param_name;
    // Parameter leaves alias the bound store instead of copying it.
    const BasicTensor<T>* ref = nullptr;
  };

  Graph() = default;
  explicit Graph(const BasicParamStore<T>& params, std::set<std::string> frozen = {})
      : params_(&params), frozen_(std::move(frozen)) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), {}, {}, false); }
  Var<T> input(BasicTensor<T> value, bool requires_grad = true) {
    return push(std::move(value), {}, {}, requires_grad && grad_enabled_);
  }

  // Leaf for a named parameter. Repeated lookups return the same node, so
  // shared weights accumulate into one gradient.
  Var<T> param(const std::string& name) {
    if (params_ == nullptr) throw UsageError("graph has no parameter store; requested " + name);
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var<T>(this, it->second);
    bool trainable = grad_enabled_ && frozen_.count(name) == 0;
    Var<T> v = push(BasicTensor<T>{}, {}, {}, trainable);
    nodes_.back().param_name = name;
    nodes_.back().ref = &params_->at(name);
    param_ids_.emplace(name, v.id());
    return v;
  }
  bool has_param(const std::string& name) const { return params_ != nullptr && params_->contains(name); }
  bool is_frozen(const std::string& name) const { return frozen_.count(name) != 0; }
  // Inference mode: parameters become plain leaves and no closures are kept.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  // Appends an op result. The backward closure is kept only when some input
  // requires a gradient.
  Var<T> emit(BasicTensor<T> value, std::vector<int> inputs, BackwardFn fn) {
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_.at(static_cast<std::size_t>(i)).requires_grad;
    return push(std::move(value), std::move(inputs), rg ? std::move(fn) : BackwardFn{}, rg);
  }

  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1)
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (backward_done_) throw UsageError("backward() already ran on this graph");
    backward_done_ = true;
    if (!node(loss.id()).requires_grad) return;
    grad_of(loss.id())[0] = T(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = node(id);
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

  // Gradient for every parameter in the bound store; untouched or frozen
  // parameters get zeros.
  BasicParamStore<T> param_grads() const {
    BasicParamStore<T> out;
    if (params_ == nullptr) return out;
    for (const auto& [name, value] : *params_) {
      auto it = param_ids_.find(name);
      if (it != param_ids_.end() && !node(it->second).grad.empty()) {
        out.insert(name, BasicTensor<T>(value.shape, node(it->second).grad));
      } else {
        out.insert(name, BasicTensor<T>::zeros(value.shape));
      }
    }
    return out;
  }

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const BasicTensor<T>& value(int id) const {
    const Node& n = node(id);
    return n.ref != nullptr ? *n.ref : n.value;
  }
  bool needs_grad(int id) const { return node(id).requires_grad; }
  std::vector<T>& grad_of(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(value(id).data.size(), T(0));
    return n.grad;
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  Var<T> push(BasicTensor<T> value, std::vector<int> inputs, BackwardFn fn, bool rg) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const BasicParamStore<T>* params_ = nullptr;
  std::set<std::string> frozen_;
  std::map<std::string, int> param_ids_;
  std::deque<Node> nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return g_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return g_->needs_grad(id_);
}

template <class T>
BasicTensor<T> Var<T>::grad() const {
  const auto& n = g_->node(id_);
  const auto& v = g_->value(id_);
  if (n.grad.empty()) return BasicTensor<T>::zeros(v.shape);
  return BasicTensor<T>(v.shape, n.grad);
}

}  // namespace anchorlab::nn
