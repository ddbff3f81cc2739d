#include "fpam/optim.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fpam {

Tensor ParamStore::add(std::string name, Tensor value) {
  if (name.empty()) throw ContractError("parameter name must not be empty");
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), value, {}});
  return value;
}

const ParamStore::Entry* ParamStore::find(std::string_view name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
  return it == entries_.end() ? nullptr : &*it;
}

bool ParamStore::contains(std::string_view name) const { return find(name) != nullptr; }

const Tensor& ParamStore::get(std::string_view name) const {
  const Entry* e = find(name);
  if (e == nullptr) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return e->value;
}

Tensor& ParamStore::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParamStore::parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

void sgd_momentum_step(ParamStore& store, Real lr, Real momentum, Real grad_scale) {
  for (auto& e : store.entries()) {
    if (!e.value.has_grad()) throw ContractError("parameter '" + e.name + "' has no gradient");
  }
  for (auto& e : store.entries()) {
    auto values = e.value.mutable_values();
    const auto grad = e.value.grad();
    if (e.velocity.empty()) e.velocity.assign(values.size(), Real(0));
    for (std::size_t i = 0; i < values.size(); ++i) {
      e.velocity[i] = momentum * e.velocity[i] + grad_scale * grad[i];
      values[i] -= lr * e.velocity[i];
    }
  }
}

double grad_norm(const ParamStore& store) {
  double total = 0.0;
  for (const auto& e : store.entries()) {
    if (!e.value.has_grad()) continue;
    for (Real g : e.value.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

double clip_scale(double norm, double max_norm) {
  if (!(max_norm > 0)) throw ContractError("clip_scale: bound must be positive");
  return norm > max_norm ? max_norm / norm : 1.0;
}

}  // namespace fpam
