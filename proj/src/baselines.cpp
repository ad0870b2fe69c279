#include "mtf/baselines.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mtf/convlstm.hpp"
#include "mtf/error.hpp"
#include "mtf/random.hpp"

namespace mtf {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ConvLstm: return "convlstm";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Cnn: return "cnn";
    case ModelKind::Cnn3d: return "cnn3d";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Persistence: return "persistence";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  for (ModelKind k : {ModelKind::ConvLstm, ModelKind::Mlp, ModelKind::Cnn, ModelKind::Cnn3d, ModelKind::Lstm,
                      ModelKind::Persistence}) {
    if (to_string(k) == name) return k;
  }
  throw ContractError("unknown model kind: " + name);
}

bool is_trainable(ModelKind kind) { return kind != ModelKind::Persistence; }

void BaselineConfig::validate() const {
  if (kind == ModelKind::ConvLstm) throw ContractError("BaselineConfig cannot describe the ConvLSTM model");
  if (grid_rows == 0 || grid_cols == 0 || services == 0) throw ContractError("BaselineConfig: empty snapshot");
  if (input_length < 1 || horizon < 1) throw ContractError("BaselineConfig: input_length and horizon must be >= 1");
  if (kind == ModelKind::Persistence) return;
  if (depth == 0 || width == 0) throw ContractError("BaselineConfig: depth and width must be positive");
  if ((kind == ModelKind::Cnn || kind == ModelKind::Cnn3d) && kernel_size % 2 == 0) {
    throw ContractError("BaselineConfig: kernel size must be odd");
  }
  if (kind == ModelKind::Lstm && embed_units == 0) throw ContractError("BaselineConfig: embed_units must be positive");
  if (!(teacher_forcing >= 0.0 && teacher_forcing <= 1.0)) {
    throw ContractError("BaselineConfig: teacher_forcing must lie in [0,1]");
  }
}

BaselineConfig desk_preset(ModelKind kind) {
  BaselineConfig c;
  c.kind = kind;
  switch (kind) {
    case ModelKind::Mlp: c.depth = 4; c.width = 64; break;
    case ModelKind::Cnn: c.depth = 4; c.width = 32; break;
    case ModelKind::Cnn3d: c.depth = 4; c.width = 32; c.head_channels = 4; break;
    case ModelKind::Lstm: c.depth = 2; c.width = 64; c.embed_units = 64; break;
    case ModelKind::Persistence: break;
    case ModelKind::ConvLstm: throw ContractError("desk_preset: use S2SConfig for the ConvLSTM");
  }
  return c;
}

BaselineConfig full_scale_preset(ModelKind kind) {
  BaselineConfig c = desk_preset(kind);
  switch (kind) {
    case ModelKind::Mlp: c.depth = 5; c.width = 500; break;
    case ModelKind::Cnn: c.depth = 11; c.width = 128; break;
    case ModelKind::Cnn3d: c.depth = 11; c.width = 128; c.head_channels = 4; break;
    case ModelKind::Lstm: c.depth = 2; c.width = 500; c.embed_units = 500; break;
    default: break;
  }
  return c;
}

namespace {

void add_dense(ModelParams& p, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  p.add(name + ".w", glorot_uniform(rng, Shape{out, in}, in, out));
  p.add(name + ".b", Tensor(Shape{out, 1}));
}

void add_norm(ModelParams& p, const std::string& name, std::size_t channels) {
  p.add(name + ".gamma", Tensor(Shape{channels}, 1.0));
  p.add(name + ".beta", Tensor(Shape{channels}));
  p.add(name + ".running_mean", Tensor(Shape{channels}), false);
  p.add(name + ".running_var", Tensor(Shape{channels}, 1.0), false);
}

std::size_t conv_out_channels(const BaselineConfig& c, std::size_t layer) {
  return layer + 1 == c.depth ? c.last_channels() : c.width;
}

NodeId activate(Graph& graph, const BaselineConfig& c, NodeId x) {
  return c.activation == Activation::Tanh ? graph.tanh(x) : x;
}

// Standardizes with the running statistics (constants within a graph), then
// applies the learned per-channel scale and shift.
NodeId normalize_layer(Graph& graph, const BaselineConfig& c, const BoundParams& params, const std::string& name,
                       NodeId x, std::vector<NormObservation>* norms) {
  if (norms != nullptr) norms->push_back(NormObservation{name, x});
  const Tensor mean = graph.value(params(name + ".running_mean"));
  const Tensor var = graph.value(params(name + ".running_var"));
  Tensor inv(mean.shape()), shift(mean.shape());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    inv[i] = 1.0 / std::sqrt(var[i] + c.norm_epsilon);
    shift[i] = -mean[i] * inv[i];
  }
  const NodeId standardized = graph.channel_affine(x, graph.constant(std::move(inv)), graph.constant(std::move(shift)));
  return graph.channel_affine(standardized, params(name + ".gamma"), params(name + ".beta"));
}

Shape output_shape(const BaselineConfig& c) { return Shape{c.horizon, c.services, c.grid_rows, c.grid_cols}; }

void check_input(const Graph& graph, const BaselineConfig& c, NodeId input) {
  const Shape want{c.input_length, c.services, c.grid_rows, c.grid_cols};
  if (graph.value(input).shape() != want) {
    throw DimensionError(fmt::format("{} forward: input shape {} does not match {}", to_string(c.kind),
                                     to_string(graph.value(input).shape()), to_string(want)));
  }
}

NodeId dense(Graph& graph, const BoundParams& params, const std::string& name, NodeId x) {
  return graph.add(graph.matmul(params(name + ".w"), x), params(name + ".b"));
}

NodeId fc_head(Graph& graph, const BaselineConfig& c, const BoundParams& params, NodeId features) {
  const std::size_t n = graph.value(features).size();
  const NodeId flat = graph.reshape(features, Shape{n, 1});
  return graph.reshape(dense(graph, params, "head", flat), output_shape(c));
}

}  // namespace

ModelParams init_params(const BaselineConfig& c) {
  c.validate();
  Rng rng(c.seed);
  ModelParams p;
  const std::size_t snapshot = c.snapshot_size();
  const std::size_t cells = c.grid_rows * c.grid_cols;
  const std::size_t k = c.kernel_size;
  switch (c.kind) {
    case ModelKind::Persistence:
      break;
    case ModelKind::Mlp: {
      std::size_t in = c.input_length * snapshot;
      for (std::size_t l = 0; l < c.depth; ++l) {
        add_dense(p, rng, fmt::format("mlp.l{}", l), in, c.width);
        in = c.width;
      }
      add_dense(p, rng, "head", in, c.horizon * snapshot);
      break;
    }
    case ModelKind::Cnn: {
      std::size_t in = c.input_length * c.services;
      for (std::size_t l = 0; l < c.depth; ++l) {
        const std::size_t out = conv_out_channels(c, l);
        p.add(fmt::format("cnn.l{}.w", l), glorot_uniform(rng, Shape{out, in, k, k}, in * k * k, out * k * k));
        add_norm(p, fmt::format("cnn.l{}.norm", l), out);
        in = out;
      }
      add_dense(p, rng, "head", in * cells, c.horizon * snapshot);
      break;
    }
    case ModelKind::Cnn3d: {
      std::size_t in = c.services;
      const std::size_t taps = k * k * k;
      for (std::size_t l = 0; l < c.depth; ++l) {
        const std::size_t out = conv_out_channels(c, l);
        p.add(fmt::format("cnn3d.l{}.w", l), glorot_uniform(rng, Shape{out, in, k, k, k}, in * taps, out * taps));
        add_norm(p, fmt::format("cnn3d.l{}.norm", l), out);
        in = out;
      }
      add_dense(p, rng, "head", in * c.input_length * cells, c.horizon * snapshot);
      break;
    }
    case ModelKind::Lstm: {
      for (const char* side : {"enc", "dec"}) {
        add_dense(p, rng, fmt::format("lstm.{}.embed", side), snapshot, c.embed_units);
        std::size_t in = c.embed_units;
        for (std::size_t l = 0; l < c.depth; ++l) {
          add_cell_params(p, rng, fmt::format("lstm.{}.cell{}", side, l), in, c.width, Shape{}, Shape{1});
          in = c.width;
        }
      }
      add_dense(p, rng, "lstm.out", c.width, snapshot);
      break;
    }
    case ModelKind::ConvLstm:
      break;
  }
  return p;
}

NodeId mlp_forward(Graph& graph, const BaselineConfig& c, const BoundParams& params, NodeId input) {
  check_input(graph, c, input);
  NodeId x = graph.reshape(input, Shape{graph.value(input).size(), 1});
  for (std::size_t l = 0; l < c.depth; ++l) x = activate(graph, c, dense(graph, params, fmt::format("mlp.l{}", l), x));
  return graph.reshape(dense(graph, params, "head", x), output_shape(c));
}

NodeId cnn_forward(Graph& graph, const BaselineConfig& c, const BoundParams& params, NodeId input,
                   std::vector<NormObservation>* norms) {
  check_input(graph, c, input);
  NodeId x = graph.reshape(input, Shape{c.input_length * c.services, c.grid_rows, c.grid_cols});
  for (std::size_t l = 0; l < c.depth; ++l) {
    x = graph.conv2d(x, params(fmt::format("cnn.l{}.w", l)));
    x = activate(graph, c, normalize_layer(graph, c, params, fmt::format("cnn.l{}.norm", l), x, norms));
  }
  return fc_head(graph, c, params, x);
}

NodeId cnn3d_forward(Graph& graph, const BaselineConfig& c, const BoundParams& params, NodeId input,
                     std::vector<NormObservation>* norms) {
  check_input(graph, c, input);
  NodeId x = graph.swap_leading_axes(input);  // [S, T, H, W]
  for (std::size_t l = 0; l < c.depth; ++l) {
    x = graph.conv3d(x, params(fmt::format("cnn3d.l{}.w", l)));
    x = activate(graph, c, normalize_layer(graph, c, params, fmt::format("cnn3d.l{}.norm", l), x, norms));
  }
  return fc_head(graph, c, params, x);
}

NodeId lstm_s2s_forward(Graph& graph, const BaselineConfig& c, const BoundParams& params, NodeId input,
                        std::optional<NodeId> target, const std::vector<bool>& forcing) {
  check_input(graph, c, input);
  const std::size_t n = c.snapshot_size();
  std::vector<Shape> states(c.depth, Shape{c.width, 1});
  const S2SNodes model = bind_recurrent(graph, params, "lstm.", Connectivity::Dense, std::move(states));
  std::vector<NodeId> xs;
  for (NodeId x : unstack(graph, input)) xs.push_back(graph.reshape(x, Shape{n, 1}));
  std::vector<NodeId> ts;
  if (target) {
    for (NodeId t : unstack(graph, *target)) ts.push_back(graph.reshape(t, Shape{n, 1}));
  }
  auto encoded = encode(graph, model, xs);
  const auto preds = decode(graph, model, std::move(encoded), xs.back(), c.horizon, ts, forcing);
  std::vector<NodeId> snapshots;
  for (NodeId p : preds) snapshots.push_back(graph.reshape(p, Shape{c.services, c.grid_rows, c.grid_cols}));
  return stack(graph, snapshots);
}

NodeId persistence_forecast(Graph& graph, NodeId input, std::size_t horizon) {
  const Shape s = graph.value(input).shape();
  if (s.empty() || horizon == 0) throw ContractError("persistence_forecast: need T_in >= 1 and horizon >= 1");
  const NodeId last = graph.slice(input, s[0] - 1, 1);
  const std::vector<NodeId> copies(horizon, last);
  return graph.concat(copies);
}

Tensor persistence_forecast(const Tensor& input, std::size_t horizon) {
  Graph graph;
  return graph.value(persistence_forecast(graph, graph.constant(input), horizon));
}

void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t channels = x.dim(0), inner = x.size() / channels;
  mean.assign(channels, 0.0);
  var.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += x[c * inner + i];
    const double m = s / static_cast<double>(inner);
    double v = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double d = x[c * inner + i] - m;
      v += d * d;
    }
    mean[c] = m;
    var[c] = v / static_cast<double>(inner);
  }
}

}  // namespace mtf
