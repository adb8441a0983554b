#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prid/param_store.hpp"
#include "prid/tensor.hpp"

namespace prid {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations. backward() replays the adjoint of every
/// recorded operation exactly once, in reverse execution order.
///
/// Node storage is a deque, so references returned by value() stay valid as more
/// operations are recorded.
template <typename T>
class Tape {
 public:
  /// Receives the adjoint of the node's output. Implementations add into the
  /// buffers returned by grad_sink() for each input.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  /// With record_gradients=false no adjoint closures are kept (inference mode).
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, nullptr); }

  /// Leaf that receives an adjoint on backward().
  Var<T> variable(Tensor<T> value, std::string_view label = "variable") {
    return push(label, std::move(value), recording_, nullptr);
  }

  /// Leaf bound to a named entry of `store`; export_gradients() writes its adjoint back.
  Var<T> parameter(const ParamStore<T>& store, const std::string& name) {
    Var<T> v = push("param:" + name, store.value(name), recording_, nullptr);
    params_.emplace_back(name, v.id());
    return v;
  }

  /// Records an operation output. The node requires a gradient iff any input does.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& in : inputs) {
      if (in.valid() && nodes_[in.id()].requires_grad) needs = true;
    }
    needs = needs && recording_;
    return push(op, std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var<T> v) const { return v.valid() && nodes_[v.id()].requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint buffer for `v` (zero-initialised on first use), or nullptr when `v`
  /// does not require a gradient.
  Tensor<T>* grad_sink(Var<T> v) {
    if (!requires_grad(v)) return nullptr;
    Node& node = nodes_[v.id()];
    if (!node.grad) node.grad.emplace(node.value.shape());
    return &*node.grad;
  }

  /// Adjoint of `v` after backward(); zeros if `v` was not reached.
  const Tensor<T>& grad(Var<T> v) {
    Tensor<T>* g = grad_sink(v);
    if (g == nullptr) throw std::invalid_argument("value '" + op_name(v.id()) + "' does not require a gradient");
    return *g;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates adjoints to every node recorded before `loss`.
  void backward(Var<T> loss) {
    if (!recording_) throw std::logic_error("backward on a tape recorded without gradients");
    const Shape& s = value(loss).shape();
    if (s.size() != 1) throw ShapeError("backward requires a scalar loss, got " + s.str());
    for (Node& node : nodes_) node.grad.reset();
    if (!requires_grad(loss)) return;
    grad_sink(loss)->fill(T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && node.grad) node.backward(*this, *node.grad);
    }
    for (Node& node : nodes_) {
      if (node.requires_grad && !node.grad) node.grad.emplace(node.value.shape());
    }
  }

  /// Adds parameter adjoints into the store's gradient slots. A parameter read
  /// more than once on this tape accumulates each read.
  void export_gradients(ParamStore<T>& store) {
    for (const auto& [name, id] : params_) {
      Node& node = nodes_[id];
      Tensor<T>& dst = store.grad(name);
      if (!node.grad) continue;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*node.grad)[i];
    }
  }

  /// Name of the first recorded operation whose output has a non-finite element.
  std::optional<std::string> first_nonfinite_op() const {
    for (const Node& node : nodes_) {
      if (!node.value.all_finite()) return node.op;
    }
    return std::nullopt;
  }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
    std::optional<Tensor<T>> grad;
  };

  Var<T> push(std::string_view op, Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::string(op), std::move(value), requires_grad, std::move(fn), std::nullopt});
    return Var<T>(this, nodes_.size() - 1);
  }

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

/// Propagates adjoints from a scalar loss and adds parameter gradients into `store`.
template <typename T>
void backward(Tape<T>& tape, Var<T> loss, ParamStore<T>& store) {
  tape.backward(loss);
  tape.export_gradients(store);
}

}  // namespace prid
