#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ndoflow/tensor.hpp"

namespace ndoflow::ad {

/// A named trainable tensor together with its accumulated gradient.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);

  const std::string& name() const noexcept { return name_; }
  Tensor& value() noexcept { return value_; }
  const Tensor& value() const noexcept { return value_; }
  Tensor& grad() noexcept { return grad_; }
  const Tensor& grad() const noexcept { return grad_; }
  void zero_grad() { grad_.fill(0.0); }

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
};

/// Ordered collection of parameters. Order is the serialization and update order.
class ParameterSet {
 public:
  /// Appends a parameter and returns its index.
  std::size_t add(std::string name, Tensor value);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const noexcept;
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  void zero_grad();
  double grad_norm() const;

  /// All values concatenated in parameter order.
  std::vector<double> flat_values() const;
  void assign_flat_values(const std::vector<double>& values);
  std::vector<double> flat_grads() const;

 private:
  std::vector<Parameter> params_;
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  Tape* tape_ptr() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// reverse index order is a reverse topological order of the graph.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradients.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept and can be read with grad().
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into `p.grad()`.
  Var param(Parameter& p);

  /// Records an op output. `backward` is dropped when no parent needs gradients.
  Var record(const char* op, Tensor value, std::initializer_list<std::size_t> parents, BackwardFn backward);
  Var record(const char* op, Tensor value, const std::vector<std::size_t>& parents, BackwardFn backward);

  /// Propagates d(loss)/d(node) for every node reachable from `loss`.
  void backward(const Var& loss);

  /// Adjoint of a node after backward(); zeros when the node was not reached.
  Tensor grad(const Var& v) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adjoint buffer of a node, zero-initialised on first access.
  Tensor& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

}  // namespace ndoflow::ad
