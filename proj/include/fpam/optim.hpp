#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fpam/tensor.hpp"

namespace fpam {

// Named trainable parameters, each paired with its momentum buffer. Order of
// registration is the canonical order for initialization and checkpoints.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    std::vector<Real> velocity;  // empty until the first optimizer step
  };

  // Registers `value` as a parameter (requires_grad is switched on).
  Tensor add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  void zero_grad();

 private:
  const Entry* find(std::string_view name) const;
  std::vector<Entry> entries_;
};

// Heavy-ball momentum: v <- momentum * v + s * g; p <- p - lr * v, with s the
// gradient scale (1 unless clipping).
void sgd_momentum_step(ParamStore& store, Real lr, Real momentum, Real grad_scale = 1);

// L2 norm over every parameter gradient, accumulated in double in store order.
double grad_norm(const ParamStore& store);

// Scale that brings a gradient of norm `norm` down to `max_norm`; 1 when it is
// already within the bound.
double clip_scale(double norm, double max_norm);

}  // namespace fpam
