#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtf/ops.hpp"
#include "mtf/params.hpp"
#include "mtf/tensor.hpp"

namespace mtf {

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

/// Tape-style reverse-mode autodiff. Nodes are appended in evaluation order, so
/// every node's inputs precede it and the tape is a topological order. A graph
/// is built, evaluated and differentiated by a single thread.
class Graph {
 public:
  enum class Op : std::uint8_t {
    Parameter,
    Constant,
    Conv2d,
    Conv3d,
    Hadamard,
    Add,
    Sub,
    Scale,
    Sigmoid,
    Tanh,
    Matmul,
    MseLoss,
    MaskedMseLoss,
    Sum,
    Reshape,
    Concat,
    Slice,
    ChannelAffine,
    SwapLeadingAxes,
  };

  NodeId parameter(Tensor value);
  NodeId constant(Tensor value);
  /// Like parameter() and constant() but without a copy; `value` must outlive the graph.
  NodeId parameter_view(const Tensor& value);
  NodeId constant_view(const Tensor& value);

  NodeId conv2d(NodeId input, NodeId kernel, std::optional<NodeId> bias = std::nullopt);
  NodeId conv3d(NodeId input, NodeId kernel, std::optional<NodeId> bias = std::nullopt);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId sigmoid(NodeId x);
  NodeId tanh(NodeId x);
  NodeId matmul(NodeId a, NodeId b);
  NodeId mse_loss(NodeId pred, NodeId target);
  /// sum(mask * (pred - target)^2) / sum(mask); the mask is not differentiated.
  NodeId masked_mse_loss(NodeId pred, NodeId target, NodeId mask);
  NodeId sum(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  /// Concatenation along axis 0.
  NodeId concat(std::span<const NodeId> parts);
  /// `count` rows of axis 0 starting at `begin`.
  NodeId slice(NodeId x, std::size_t begin, std::size_t count);
  /// y[c, ...] = x[c, ...] * scale[c] + shift[c]; scale and shift are [C].
  NodeId channel_affine(NodeId x, NodeId scale, NodeId shift);
  /// [A, B, rest...] -> [B, A, rest...].
  NodeId swap_leading_axes(NodeId x);

  const Tensor& value(NodeId id) const;
  /// Gradient after backward(); throws ContractError for nodes the loss did not reach.
  const Tensor& gradient(NodeId id) const;
  /// Moves the gradient out of the graph; the node has no gradient afterwards.
  Tensor take_gradient(NodeId id);
  Op op(NodeId id) const;
  std::span<const NodeId> inputs(NodeId id) const;
  bool is_parameter(NodeId id) const;
  bool requires_grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a one-element `loss`. Gradients are reset first,
  /// so repeated calls give identical results. Every parameter node has a
  /// gradient afterwards, zero when the loss does not depend on it.
  void backward(NodeId loss);

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<NodeId> inputs;
    Tensor value;
    const Tensor* view = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    double factor = 0.0;
    std::size_t begin = 0;
    ConvGeometry conv;
  };

  NodeId push(Node node);
  static const Tensor& value_of(const Node& n) { return n.view != nullptr ? *n.view : n.value; }
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  Tensor& grad_of(NodeId id);
  void propagate(const Node& n);

  std::vector<Node> nodes_;
};

/// Parameter nodes for every entry of a ModelParams. Trainable entries become
/// parameter nodes, the rest constants. The nodes refer to `params` without
/// copying, so `params` must outlive the graph.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ModelParams& params);
  BoundParams(Graph& graph, ModelParams&& params) = delete;
  NodeId operator()(const std::string& name) const;
  /// Gradients of the trainable entries after `graph.backward()`.
  ParamGradients gradients(const Graph& graph) const;
  /// As gradients(), moving them out of the graph.
  ParamGradients take_gradients(Graph& graph) const;

 private:
  std::map<std::string, NodeId> ids_;
  std::vector<std::string> trainable_;
};

/// Central differences (f(p+eps) - f(p-eps)) / (2 eps), one coordinate at a time.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& point,
                            double eps = 1e-5);
/// Central differences over every trainable entry of `params`.
ParamGradients finite_diff_gradient(const std::function<double(const ModelParams&)>& f,
                                    const ModelParams& params, double eps = 1e-5);

/// Largest elementwise |a-b| / max(|a|, |b|, floor) across matching entries.
double max_relative_error(const ParamGradients& a, const ParamGradients& b, double floor = 1e-8);

}  // namespace mtf
