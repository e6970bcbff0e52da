#include "ndoflow/autodiff.hpp"

#include <cmath>
#include <string>

namespace ndoflow::ad {

Parameter::Parameter(std::string name, Tensor value)
    : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape(), 0.0) {}

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

Parameter& ParameterSet::at(std::string_view name) {
  for (auto& p : params_) {
    if (p.name() == name) return p;
  }
  throw Error("no parameter named " + std::string(name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name() == name) return true;
  }
  return false;
}

std::size_t ParameterSet::element_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad().values()) s += g * g;
  }
  return std::sqrt(s);
}

std::vector<double> ParameterSet::flat_values() const {
  std::vector<double> out;
  out.reserve(element_count());
  for (const auto& p : params_) out.insert(out.end(), p.value().values().begin(), p.value().values().end());
  return out;
}

void ParameterSet::assign_flat_values(const std::vector<double>& values) {
  if (values.size() != element_count()) throw ShapeError("flat parameter vector has wrong length");
  std::size_t k = 0;
  for (auto& p : params_) {
    for (double& v : p.value().values()) v = values[k++];
  }
}

std::vector<double> ParameterSet::flat_grads() const {
  std::vector<double> out;
  out.reserve(element_count());
  for (const auto& p : params_) out.insert(out.end(), p.grad().values().begin(), p.grad().values().end());
  return out;
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value();
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<std::size_t> parents, BackwardFn backward) {
  return record(op, std::move(value), std::vector<std::size_t>(parents), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, const std::vector<std::size_t>& parents, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from op '") + op + "'");
  }
  Node n;
  n.value = std::move(value);
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw Error("op parent is not on this tape");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ptr() != this || loss.id() >= nodes_.size()) {
    throw Error("backward: loss is not recorded on this tape (detached graph)");
  }
  if (loss.value().numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.value().shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) {
      n.backward(*this, i);
    } else if (n.param) {
      Tensor& pg = n.param->grad();
      if (!pg.same_shape(n.grad)) pg = Tensor(n.value.shape(), 0.0);
      for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
    }
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.has_grad) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::clear() { nodes_.clear(); }

}  // namespace ndoflow::ad
