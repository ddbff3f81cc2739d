#include "fpam/tensor.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace fpam {

Shape::Shape(std::initializer_list<std::size_t> extents)
    : Shape(std::vector<std::size_t>(extents)) {}

Shape::Shape(std::vector<std::size_t> extents) : extents_(std::move(extents)) {
  if (extents_.empty() || extents_.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(extents_.size()));
  }
  for (std::size_t axis = 0; axis < extents_.size(); ++axis) {
    if (extents_[axis] == 0) {
      throw ShapeError("extent of axis " + std::to_string(axis) + " must be >= 1");
    }
  }
}

std::size_t Shape::numel() const {
  if (extents_.empty()) return 0;
  std::size_t n = 1;
  for (auto e : extents_) n *= e;
  return n;
}

std::string Shape::str() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < extents_.size(); ++i) {
    if (i) out << 'x';
    out << extents_[i];
  }
  return out.str();
}

namespace detail {

std::span<Real> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), Real(0));
  return grad;
}

}  // namespace detail

namespace {

thread_local bool tl_grad_enabled = true;

void require_defined(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("operation on an undefined tensor");
}

}  // namespace

Tensor::Tensor(Shape shape, Real fill) : Tensor(shape, std::vector<Real>(shape.numel(), fill)) {}

Tensor::Tensor(Shape shape, std::vector<Real> values) {
  if (shape.rank() == 0) throw ShapeError("tensor needs at least one axis");
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor " + shape.str() + " expects " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(node_);
  return node_->shape;
}

std::span<const Real> Tensor::values() const {
  require_defined(node_);
  return node_->value;
}

std::span<Real> Tensor::mutable_values() {
  require_defined(node_);
  if (node_->backward) throw ContractError("in-place write to a non-leaf tensor");
  return node_->value;
}

Real Tensor::item() const {
  require_defined(node_);
  if (node_->value.size() != 1) {
    throw ShapeError("item() on tensor " + node_->shape.str() + " with more than one element");
  }
  return node_->value[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.rank()) throw ShapeError("index rank does not match tensor " + s.str());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) {
      throw ShapeError("index " + std::to_string(i) + " out of range on axis " + std::to_string(axis));
    }
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(node_);
  node_->requires_grad = on;
  return *this;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  require_defined(node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

Tensor Tensor::reshape(Shape target) const {
  if (target.numel() != numel()) {
    throw ShapeError("reshape " + shape().str() + " -> " + target.str() + " changes element count");
  }
  return detail::make_result(std::move(target), node_->value, {*this}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

bool grad_enabled() { return tl_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<Real> values, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> back) {
  Tensor out(std::move(shape), std::move(values));
  if (!tl_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.backward = std::move(back);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  return out;
}

Tensor make_result(Shape shape, std::vector<Real> values, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> back) {
  return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(back));
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  auto root = loss.node();
  if (root->consumed) {
    throw ContractError("backward called twice on the same graph; run the forward pass again");
  }
  if (!root->requires_grad) throw ContractError("backward on a detached tensor");
  if (root->value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + root->shape.str());
  }

  // Iterative post-order DFS; reversed it is a topological order from the root.
  // Owning: releasing a node's inputs must not free nodes still queued.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack{{root, 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = it->get();
    if (!node->backward) continue;
    node->backward(*node);
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->consumed = true;
  }
  root->consumed = true;
}

}  // namespace fpam
