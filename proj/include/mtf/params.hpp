#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mtf/tensor.hpp"

namespace mtf {

/// Gradients (or optimizer moments) keyed by parameter name.
using ParamGradients = std::map<std::string, Tensor>;

/// Named tensors of a model in a fixed insertion order. Non-trainable entries
/// (e.g. running normalization statistics) are carried alongside the weights
/// but never touched by the optimizer.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(std::string name, Tensor value, bool trainable = true);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// Number of trainable scalars.
  std::size_t trainable_scalars() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  const Entry* find(std::string_view name) const;

  std::vector<Entry> entries_;
};

}  // namespace mtf
