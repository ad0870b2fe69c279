#include "mtf/params.hpp"

#include "mtf/error.hpp"

namespace mtf {

void ModelParams::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  entries_.push_back(Entry{std::move(name), std::move(value), trainable});
}

const ModelParams::Entry* ModelParams::find(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

bool ModelParams::contains(std::string_view name) const { return find(name) != nullptr; }

const Tensor& ModelParams::get(std::string_view name) const {
  const Entry* e = find(name);
  if (e == nullptr) throw ContractError("unknown parameter: " + std::string(name));
  return e->value;
}

Tensor& ModelParams::get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
}

std::size_t ModelParams::trainable_scalars() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

}  // namespace mtf
