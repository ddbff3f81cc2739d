#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpam/errors.hpp"

namespace fpam {

// Numeric precision of the tensor engine. Tests build at 64 bits, the
// training binary at 32 bits; the API is identical.
#ifdef FPAM_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Extents of a rank 1..4 row-major array. Feature maps are C x H x W or
// N x C x H x W with H = time frames and W = mel bins.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents);
  explicit Shape(std::vector<std::size_t> extents);

  std::size_t rank() const { return extents_.size(); }
  std::size_t operator[](std::size_t axis) const { return extents_.at(axis); }
  std::size_t numel() const;
  const std::vector<std::size_t>& extents() const { return extents_; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> extents_;
};

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Zero-filled on first use.
  std::span<Real> grad_buffer();
};

}  // namespace detail

// Handle to a value that may participate in the gradient tape. Copies share
// the underlying storage, so parameters updated in place stay visible to every
// module that holds them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape()[axis]; }
  std::size_t numel() const { return shape().numel(); }

  std::span<const Real> values() const;
  // In-place access for leaves only (parameters, inputs).
  std::span<Real> mutable_values();
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  Tensor& set_requires_grad(bool on = true);
  bool requires_grad() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  // Same values, no tape history.
  Tensor detach() const;
  // Differentiable reshape; numel must be preserved.
  Tensor reshape(Shape shape) const;

  static Tensor from_node(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode accumulation of d(loss)/d(leaf) into every reachable leaf that
// requires a gradient. The recorded graph is released afterwards; calling
// backward again on the same loss is a contract error.
void backward(const Tensor& loss);

// Whether ops record the tape on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result. When recording is enabled and any input requires a
// gradient, the result keeps the inputs alive and registers `back`, which
// reads the result's grad and accumulates into the inputs' grad buffers.
Tensor make_result(Shape shape, std::vector<Real> values, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> back);
Tensor make_result(Shape shape, std::vector<Real> values, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> back);

}  // namespace detail

}  // namespace fpam
