#include "mtf/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mtf/error.hpp"

namespace mtf {

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError(fmt::format("unknown graph node {}", id.index));
  return nodes_[id.index];
}

Graph::Node& Graph::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(id));
}

const Tensor& Graph::value(NodeId id) const { return value_of(node(id)); }

const Tensor& Graph::gradient(NodeId id) const {
  const Node& n = node(id);
  if (!n.has_grad) throw ContractError("gradient requested before backward() reached the node");
  return n.grad;
}

Tensor Graph::take_gradient(NodeId id) {
  Node& n = node(id);
  if (!n.has_grad) throw ContractError("gradient requested before backward() reached the node");
  n.has_grad = false;
  return std::move(n.grad);
}

Graph::Op Graph::op(NodeId id) const { return node(id).op; }
std::span<const NodeId> Graph::inputs(NodeId id) const { return node(id).inputs; }
bool Graph::is_parameter(NodeId id) const { return node(id).op == Op::Parameter; }
bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }

NodeId Graph::parameter(Tensor value) {
  Node n;
  n.op = Op::Parameter;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::parameter_view(const Tensor& value) {
  Node n;
  n.op = Op::Parameter;
  n.view = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::constant_view(const Tensor& value) {
  Node n;
  n.op = Op::Constant;
  n.view = &value;
  return push(std::move(n));
}

namespace {

template <class... Ids>
bool any_requires(const auto& graph, Ids... ids) {
  return (graph.requires_grad(ids) || ...);
}

}  // namespace

NodeId Graph::conv2d(NodeId input, NodeId kernel, std::optional<NodeId> bias) {
  const Tensor& x = value(input);
  const Tensor& k = value(kernel);
  Node n;
  n.op = Op::Conv2d;
  n.conv = conv2d_geometry(x.shape(), k.shape());
  n.value = mtf::conv2d(x, k, bias ? &value(*bias) : nullptr);
  n.inputs = {input, kernel};
  if (bias) n.inputs.push_back(*bias);
  n.requires_grad = any_requires(*this, input, kernel) || (bias && requires_grad(*bias));
  return push(std::move(n));
}

NodeId Graph::conv3d(NodeId input, NodeId kernel, std::optional<NodeId> bias) {
  const Tensor& x = value(input);
  const Tensor& k = value(kernel);
  Node n;
  n.op = Op::Conv3d;
  n.conv = conv3d_geometry(x.shape(), k.shape());
  n.value = mtf::conv3d(x, k, bias ? &value(*bias) : nullptr);
  n.inputs = {input, kernel};
  if (bias) n.inputs.push_back(*bias);
  n.requires_grad = any_requires(*this, input, kernel) || (bias && requires_grad(*bias));
  return push(std::move(n));
}

NodeId Graph::hadamard(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Hadamard;
  n.value = mtf::hadamard(value(a), value(b));
  n.inputs = {a, b};
  n.requires_grad = any_requires(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Add;
  n.value = mtf::add(value(a), value(b));
  n.inputs = {a, b};
  n.requires_grad = any_requires(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Sub;
  n.value = mtf::sub(value(a), value(b));
  n.inputs = {a, b};
  n.requires_grad = any_requires(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  Node n;
  n.op = Op::Scale;
  n.value = value(x);
  for (double& v : n.value.data()) v *= factor;
  n.factor = factor;
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
  Node n;
  n.op = Op::Sigmoid;
  n.value = mtf::sigmoid(value(x));
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Graph::tanh(NodeId x) {
  Node n;
  n.op = Op::Tanh;
  n.value = mtf::tanh(value(x));
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Matmul;
  n.value = mtf::matmul(value(a), value(b));
  n.inputs = {a, b};
  n.requires_grad = any_requires(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::mse_loss(NodeId pred, NodeId target) {
  Node n;
  n.op = Op::MseLoss;
  n.value = Tensor::scalar(mtf::mse_loss(value(pred), value(target)));
  n.inputs = {pred, target};
  n.requires_grad = any_requires(*this, pred, target);
  return push(std::move(n));
}

NodeId Graph::masked_mse_loss(NodeId pred, NodeId target, NodeId mask) {
  const Tensor& p = value(pred);
  const Tensor& t = value(target);
  const Tensor& m = value(mask);
  require_same_shape(p, t, "masked_mse_loss");
  require_same_shape(p, m, "masked_mse_loss");
  double total = 0.0;
  double weight = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    total += m[i] * d * d;
    weight += m[i];
  }
  if (!(weight > 0.0)) throw ContractError("masked_mse_loss: mask selects no elements");
  Node n;
  n.op = Op::MaskedMseLoss;
  n.value = Tensor::scalar(total / weight);
  n.factor = weight;
  n.inputs = {pred, target, mask};
  n.requires_grad = any_requires(*this, pred, target);
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
  const Tensor& v = value(x);
  double total = 0.0;
  for (double e : v.data()) total += e;
  Node n;
  n.op = Op::Sum;
  n.value = Tensor::scalar(total);
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  Node n;
  n.op = Op::Reshape;
  n.value = value(x).reshaped(std::move(shape));
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = value(parts.front()).shape();
  if (first.empty()) throw DimensionError("concat of scalars");
  Shape out_shape = first;
  out_shape[0] = 0;
  bool needs_grad = false;
  for (NodeId p : parts) {
    const Shape& s = value(p).shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError(fmt::format("concat: shape {} incompatible with {}", to_string(s), to_string(first)));
    }
    out_shape[0] += s[0];
    needs_grad = needs_grad || requires_grad(p);
  }
  std::vector<double> data;
  data.reserve(shape_size(out_shape));
  for (NodeId p : parts) {
    const auto src = value(p).data();
    data.insert(data.end(), src.begin(), src.end());
  }
  Node n;
  n.op = Op::Concat;
  n.value = Tensor(std::move(out_shape), std::move(data));
  n.inputs.assign(parts.begin(), parts.end());
  n.requires_grad = needs_grad;
  return push(std::move(n));
}

NodeId Graph::slice(NodeId x, std::size_t begin, std::size_t count) {
  const Tensor& v = value(x);
  if (v.rank() == 0 || count == 0 || begin + count > v.dim(0)) {
    throw DimensionError(fmt::format("slice [{}, {}) out of range for {}", begin, begin + count,
                                     to_string(v.shape())));
  }
  Shape out_shape = v.shape();
  out_shape[0] = count;
  const std::size_t row = v.size() / v.dim(0);
  const auto src = v.data();
  Node n;
  n.op = Op::Slice;
  n.value = Tensor(out_shape, std::vector<double>(src.begin() + static_cast<long>(begin * row),
                                                  src.begin() + static_cast<long>((begin + count) * row)));
  n.begin = begin;
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

NodeId Graph::channel_affine(NodeId x, NodeId scale, NodeId shift) {
  const Tensor& v = value(x);
  const Tensor& s = value(scale);
  const Tensor& b = value(shift);
  if (v.rank() == 0 || s.shape() != Shape{v.dim(0)} || b.shape() != Shape{v.dim(0)}) {
    throw DimensionError(fmt::format("channel_affine: {} with scale {} and shift {}", to_string(v.shape()),
                                     to_string(s.shape()), to_string(b.shape())));
  }
  Tensor out = v;
  const std::size_t inner = v.size() / v.dim(0);
  for (std::size_t c = 0; c < v.dim(0); ++c) {
    for (std::size_t i = 0; i < inner; ++i) {
      double& e = out[c * inner + i];
      e = e * s[c] + b[c];
    }
  }
  Node n;
  n.op = Op::ChannelAffine;
  n.value = std::move(out);
  n.inputs = {x, scale, shift};
  n.requires_grad = any_requires(*this, x, scale, shift);
  return push(std::move(n));
}

NodeId Graph::swap_leading_axes(NodeId x) {
  const Tensor& v = value(x);
  if (v.rank() < 2) throw DimensionError("swap_leading_axes needs rank >= 2, got " + to_string(v.shape()));
  const std::size_t a = v.dim(0), b = v.dim(1), inner = v.size() / (a * b);
  Shape out_shape = v.shape();
  std::swap(out_shape[0], out_shape[1]);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      std::copy_n(v.data().begin() + static_cast<long>((i * b + j) * inner), inner,
                  out.data().begin() + static_cast<long>((j * a + i) * inner));
    }
  }
  Node n;
  n.op = Op::SwapLeadingAxes;
  n.value = std::move(out);
  n.inputs = {x};
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Tensor& Graph::grad_of(NodeId id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad = Tensor(value_of(n).shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(NodeId loss) {
  if (value(loss).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_of(loss).fill(1.0);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad) continue;
    propagate(n);
  }
  // Parameters the loss does not reach get a zero gradient.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Parameter) grad_of(NodeId{static_cast<std::uint32_t>(i)});
  }
}

void Graph::propagate(const Node& n) {
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t k) { return requires_grad(n.inputs[k]); };
  switch (n.op) {
    case Op::Parameter:
    case Op::Constant:
      return;
    case Op::Conv2d:
    case Op::Conv3d: {
      const Tensor& x = value(n.inputs[0]);
      const Tensor& k = value(n.inputs[1]);
      double* gx = wants(0) ? grad_of(n.inputs[0]).data().data() : nullptr;
      double* gk = wants(1) ? grad_of(n.inputs[1]).data().data() : nullptr;
      double* gb = (n.inputs.size() > 2 && wants(2)) ? grad_of(n.inputs[2]).data().data() : nullptr;
      kernels::conv_backward(n.conv, x.data().data(), k.data().data(), g.data().data(), gx, gk, gb);
      return;
    }
    case Op::Hadamard: {
      if (wants(0)) {
        Tensor& ga = grad_of(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        Tensor& gb = grad_of(n.inputs[1]);
        const Tensor& a = value(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      return;
    }
    case Op::Add:
    case Op::Sub: {
      const double sign = n.op == Op::Add ? 1.0 : -1.0;
      if (wants(0)) {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
      return;
    }
    case Op::Scale: {
      Tensor& gx = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.factor * g[i];
      return;
    }
    case Op::Sigmoid: {
      Tensor& gx = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        gx[i] += g[i] * y * (1.0 - y);
      }
      return;
    }
    case Op::Tanh: {
      Tensor& gx = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        gx[i] += g[i] * (1.0 - y * y);
      }
      return;
    }
    case Op::Matmul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      kernels::matmul_backward(m, k, cols, a.data().data(), b.data().data(), g.data().data(),
                               wants(0) ? grad_of(n.inputs[0]).data().data() : nullptr,
                               wants(1) ? grad_of(n.inputs[1]).data().data() : nullptr);
      return;
    }
    case Op::MseLoss:
    case Op::MaskedMseLoss: {
      const Tensor& p = value(n.inputs[0]);
      const Tensor& t = value(n.inputs[1]);
      const bool masked = n.op == Op::MaskedMseLoss;
      const Tensor* m = masked ? &value(n.inputs[2]) : nullptr;
      const double denom = masked ? n.factor : static_cast<double>(p.size());
      const double coeff = 2.0 * g[0] / denom;
      Tensor* gp = wants(0) ? &grad_of(n.inputs[0]) : nullptr;
      Tensor* gt = wants(1) ? &grad_of(n.inputs[1]) : nullptr;
      for (std::size_t i = 0; i < p.size(); ++i) {
        double d = coeff * (p[i] - t[i]);
        if (m != nullptr) d *= (*m)[i];
        if (gp != nullptr) (*gp)[i] += d;
        if (gt != nullptr) (*gt)[i] -= d;
      }
      return;
    }
    case Op::Sum: {
      Tensor& gx = grad_of(n.inputs[0]);
      for (double& v : gx.data()) v += g[0];
      return;
    }
    case Op::Reshape: {
      Tensor& gx = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }
    case Op::Concat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = value(n.inputs[k]).size();
        if (wants(k)) {
          Tensor& gx = grad_of(n.inputs[k]);
          for (std::size_t i = 0; i < len; ++i) gx[i] += g[offset + i];
        }
        offset += len;
      }
      return;
    }
    case Op::Slice: {
      Tensor& gx = grad_of(n.inputs[0]);
      const std::size_t row = gx.size() / gx.dim(0);
      const std::size_t start = n.begin * row;
      for (std::size_t i = 0; i < g.size(); ++i) gx[start + i] += g[i];
      return;
    }
    case Op::ChannelAffine: {
      const Tensor& x = value(n.inputs[0]);
      const Tensor& s = value(n.inputs[1]);
      const std::size_t channels = x.dim(0), inner = x.size() / channels;
      Tensor* gx = wants(0) ? &grad_of(n.inputs[0]) : nullptr;
      Tensor* gs = wants(1) ? &grad_of(n.inputs[1]) : nullptr;
      Tensor* gb = wants(2) ? &grad_of(n.inputs[2]) : nullptr;
      for (std::size_t c = 0; c < channels; ++c) {
        double ds = 0.0, db = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = c * inner + i;
          if (gx != nullptr) (*gx)[idx] += g[idx] * s[c];
          ds += g[idx] * x[idx];
          db += g[idx];
        }
        if (gs != nullptr) (*gs)[c] += ds;
        if (gb != nullptr) (*gb)[c] += db;
      }
      return;
    }
    case Op::SwapLeadingAxes: {
      Tensor& gx = grad_of(n.inputs[0]);
      const std::size_t a = gx.dim(0), b = gx.dim(1), inner = gx.size() / (a * b);
      for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
          for (std::size_t e = 0; e < inner; ++e) gx[(i * b + j) * inner + e] += g[(j * a + i) * inner + e];
        }
      }
      return;
    }
  }
}

BoundParams::BoundParams(Graph& graph, const ModelParams& params) {
  for (const auto& e : params.entries()) {
    ids_[e.name] = e.trainable ? graph.parameter_view(e.value) : graph.constant_view(e.value);
    if (e.trainable) trainable_.push_back(e.name);
  }
}

NodeId BoundParams::operator()(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw ContractError("parameter not bound: " + name);
  return it->second;
}

ParamGradients BoundParams::gradients(const Graph& graph) const {
  ParamGradients out;
  for (const std::string& name : trainable_) {
    const NodeId id = ids_.at(name);
    const Tensor& value = graph.value(id);
    try {
      out.emplace(name, graph.gradient(id));
    } catch (const ContractError&) {
      out.emplace(name, Tensor(value.shape(), 0.0));
    }
  }
  return out;
}

ParamGradients BoundParams::take_gradients(Graph& graph) const {
  ParamGradients out;
  for (const std::string& name : trainable_) {
    const NodeId id = ids_.at(name);
    try {
      out.emplace(name, graph.take_gradient(id));
    } catch (const ContractError&) {
      out.emplace(name, Tensor(graph.value(id).shape(), 0.0));
    }
  }
  return out;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_gradient: eps must be positive");
  Tensor grad(point.shape(), 0.0);
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

ParamGradients finite_diff_gradient(const std::function<double(const ModelParams&)>& f,
                                    const ModelParams& params, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_gradient: eps must be positive");
  ParamGradients out;
  ModelParams probe = params;
  for (std::size_t k = 0; k < probe.entries().size(); ++k) {
    if (!probe.entries()[k].trainable) continue;
    Tensor& value = probe.entries()[k].value;
    Tensor grad(value.shape(), 0.0);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = f(probe);
      value[i] = orig - eps;
      const double down = f(probe);
      value[i] = orig;
      grad[i] = (up - down) / (2.0 * eps);
    }
    out.emplace(probe.entries()[k].name, std::move(grad));
  }
  return out;
}

double max_relative_error(const ParamGradients& a, const ParamGradients& b, double floor) {
  if (a.size() != b.size()) throw ContractError("max_relative_error: gradient sets differ in size");
  double worst = 0.0;
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw ContractError("max_relative_error: missing gradient for " + name);
    require_same_shape(ta, it->second, "max_relative_error");
    for (std::size_t i = 0; i < ta.size(); ++i) {
      const double x = ta[i], y = it->second[i];
      const double denom = std::max({std::abs(x), std::abs(y), floor});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  }
  return worst;
}

}  // namespace mtf
