#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prid/tensor.hpp"

namespace prid {

/// Named trainable tensors with optional gradient slots. Iteration order is the
/// lexicographic order of names, which fixes checkpoint layout and optimizer order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
  };

  void add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = entries_.try_emplace(name, Entry{std::move(value), std::nullopt});
    if (!inserted) throw std::invalid_argument("duplicate parameter '" + name + "'");
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<T>& value(const std::string& name) { return lookup(name).value; }
  const Tensor<T>& value(const std::string& name) const { return lookup(name).value; }

  bool has_grad(const std::string& name) const { return lookup(name).grad.has_value(); }

  /// Gradient slot, allocated as zeros on first access.
  Tensor<T>& grad(const std::string& name) {
    Entry& e = lookup(name);
    if (!e.grad) e.grad.emplace(e.value.shape());
    return *e.grad;
  }
  const Tensor<T>& grad(const std::string& name) const {
    const Entry& e = lookup(name);
    if (!e.grad) throw std::invalid_argument("parameter '" + name + "' has no gradient");
    return *e.grad;
  }

  void clear_grads() {
    for (auto& [_, e] : entries_) e.grad.reset();
  }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [_, e] : entries_) total += e.value.size();
    return total;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>());
    return out;
  }

 private:
  Entry& lookup(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& lookup(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace prid
